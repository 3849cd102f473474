"""Training over the descriptor buffer, eval-mode inference, and the
relocalization metrics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .buffer import BatchSampler, MiningConfig, TrainingBuffer
from .encoder import EncoderConfig, encode
from .errors import NonFiniteLoss
from .geometry import (
    Pose,
    Quaternion,
    orientation_error_deg,
    quat_exp,
    translation_error_m,
)
from .losses import LossConfig, composite_loss
from .nn import ModelConfig, PoseRegressor
from .optim import Adam, OneCycleSchedule
from .pointcloud import PointCloud, PreprocessCfg, preprocess
from .synth import dataset_scans

log = logging.getLogger(__name__)

EMA_WINDOW = 50


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 30
    lr_init: float = 0.005
    lr_final: float = 1e-6
    warmup_frac: float = 0.1
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)


@dataclass
class TrainReport:
    steps: list[dict] = field(default_factory=list)
    epoch_ema: list[float] = field(default_factory=list)
    wall_s: float = 0.0
    checkpoint_path: str = ""

    def final_ema(self) -> float:
        return self.epoch_ema[-1] if self.epoch_ema else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss_pose", "loss_reg", "loss_total", "lr", "wall_ms"])
            for row in self.steps:
                w.writerow(
                    [
                        row["step"],
                        repr(row["loss_pose"]),
                        repr(row["loss_reg"]),
                        repr(row["loss_total"]),
                        repr(row["lr"]),
                        f"{row['wall_ms']:.3f}",
                    ]
                )


@dataclass
class EvalReport:
    scan_ids: list[int]
    t_errors: list[float]
    r_errors: list[float]
    pred_positions: list[np.ndarray]
    gt_positions: list[np.ndarray]
    trans_thresh: float
    rot_thresh: float

    @property
    def mean_t(self) -> float:
        return float(np.mean(self.t_errors))

    @property
    def median_t(self) -> float:
        return float(np.median(self.t_errors))

    @property
    def mean_r(self) -> float:
        return float(np.mean(self.r_errors))

    @property
    def median_r(self) -> float:
        return float(np.median(self.r_errors))

    @property
    def reloc_rate(self) -> float:
        t = np.asarray(self.t_errors)
        r = np.asarray(self.r_errors)
        ok = (t <= self.trans_thresh) & (r <= self.rot_thresh)
        return float(100.0 * ok.mean())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["scan_id", "t_err_m", "r_err_deg", "pred_x", "pred_y", "pred_z", "gt_x", "gt_y", "gt_z"]
            )
            for i, sid in enumerate(self.scan_ids):
                p, g = self.pred_positions[i], self.gt_positions[i]
                w.writerow(
                    [sid, repr(self.t_errors[i]), repr(self.r_errors[i])]
                    + [repr(float(v)) for v in (*p, *g)]
                )

    def summary(self) -> str:
        return (
            f"scans = {len(self.scan_ids)}\n"
            f"mean_t_err_m = {self.mean_t:.4f}\n"
            f"median_t_err_m = {self.median_t:.4f}\n"
            f"mean_r_err_deg = {self.mean_r:.4f}\n"
            f"median_r_err_deg = {self.median_r:.4f}\n"
            f"reloc_rate_pct = {self.reloc_rate:.2f}\n"
            f"trans_thresh_m = {self.trans_thresh:g}\n"
            f"rot_thresh_deg = {self.rot_thresh:g}\n"
        )


def _forward_backward(model: PoseRegressor, batch, cfg: LossConfig, dtype):
    """One composite forward/backward; returns the three loss values."""
    need_reg = cfg.reg_kind != "none" and cfg.reg_weight != 0.0
    fq = np.asarray(batch.query, dtype=dtype)
    gq, cache_q = model.aggregator.forward(fq)
    t_pred, q_pred, cache_pred = model.predictor.forward(gq, model.training)

    zq = zp = zn = None
    cache_list = {}
    if need_reg:
        gp, cache_p = model.aggregator.forward(np.asarray(batch.positive, dtype=dtype))
        zq, cpq = model.projector.forward(gq)
        zp, cpp = model.projector.forward(gp)
        cache_list.update(cache_p=cache_p, cpq=cpq, cpp=cpp)
        if cfg.reg_kind == "triplet":
            gn, cache_n = model.aggregator.forward(np.asarray(batch.negative, dtype=dtype))
            zn, cpn = model.projector.forward(gn)
            cache_list.update(cache_n=cache_n, cpn=cpn)

    total, pose_v, reg_v, grads = composite_loss(
        cfg,
        t_pred,
        q_pred,
        np.asarray(batch.t_gt, dtype=dtype),
        np.asarray(batch.logq_gt, dtype=dtype),
        zq,
        zp,
        zn,
        float(model.siglip_tbar.value[0]),
        float(model.siglip_b.value[0]),
    )

    dgq = model.predictor.backward(
        cache_pred,
        np.asarray(grads["t_pred"], dtype=dtype),
        np.asarray(grads["q_pred"], dtype=dtype),
    )
    if need_reg:
        dgq += model.projector.backward(cache_list["cpq"], np.asarray(grads["zq"], dtype=dtype))
        dgp = model.projector.backward(cache_list["cpp"], np.asarray(grads["zp"], dtype=dtype))
        model.aggregator.backward(cache_list["cache_p"], dgp)
        if cfg.reg_kind == "triplet":
            dgn = model.projector.backward(cache_list["cpn"], np.asarray(grads["zn"], dtype=dtype))
            model.aggregator.backward(cache_list["cache_n"], dgn)
        model.siglip_tbar.grad += grads["tbar"]
        model.siglip_b.grad += grads["bias"]
    model.aggregator.backward(cache_q, dgq)
    return total, pose_v, reg_v


def train(
    buf: TrainingBuffer,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> tuple[PoseRegressor, TrainReport]:
    """Buffer-driven training: sample batch, mixer -> predictor/projector,
    composite loss, backprop, Adam with the one-cycle schedule.

    Positive/negative mining draws happen on every step regardless of
    reg_kind, so runs that differ only in the regularizer consume the same
    RNG sequence.
    """
    if train_cfg.batch_size > len(buf):
        raise ValueError(f"batch size {train_cfg.batch_size} > buffer size {len(buf)}")
    model = PoseRegressor(model_cfg, seed=rng.derive(train_cfg.seed, 1))
    model.train_mode()
    dtype = model.dtype()
    sampler = BatchSampler(buf, train_cfg.mining)
    stream = rng.Stream(rng.derive(train_cfg.seed, 2))
    adam = Adam()
    params = model.named_params()

    steps_per_epoch = -(-len(buf) // train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch
    sched = OneCycleSchedule(
        train_cfg.lr_init, train_cfg.lr_final, max(total_steps, 1), train_cfg.warmup_frac
    )

    report = TrainReport()
    ema = None
    ema_alpha = 2.0 / (EMA_WINDOW + 1.0)
    t_start = time.perf_counter()
    step = 0
    gather_neg = train_cfg.loss.reg_kind == "triplet"
    for epoch in range(train_cfg.epochs):
        for _ in range(steps_per_epoch):
            t0 = time.perf_counter()
            batch = sampler.sample(train_cfg.batch_size, stream, gather_neg)
            model.zero_grads()
            total, pose_v, reg_v = _forward_backward(model, batch, train_cfg.loss, dtype)
            if not np.isfinite(total):
                raise NonFiniteLoss(step, total)
            lr = sched.lr_at(step)
            adam.step(params, lr)
            ema = total if ema is None else (1 - ema_alpha) * ema + ema_alpha * total
            report.steps.append(
                {
                    "step": step,
                    "loss_pose": pose_v,
                    "loss_reg": reg_v,
                    "loss_total": total,
                    "lr": lr,
                    "wall_ms": (time.perf_counter() - t0) * 1e3,
                }
            )
            step += 1
        report.epoch_ema.append(float(ema))
        log.info(
            "epoch %d/%d loss_ema %.4f", epoch + 1, train_cfg.epochs, ema
        )
    report.wall_s = time.perf_counter() - t_start
    return model, report


def predict_pose(
    model: PoseRegressor,
    scan: PointCloud,
    enc_cfg: EncoderConfig,
    preproc: PreprocessCfg,
    fps_seed: int,
) -> Pose:
    """Preprocess, encode, aggregate and regress one scan in eval mode."""
    model.eval_mode()
    clean = preprocess(scan, preproc)
    ds = encode(clean, enc_cfg, model.cfg.m, fps_seed)
    f = ds.F.astype(model.dtype())[None, :, :]
    g, _ = model.aggregator.forward(f)
    t_pred, q_pred, _ = model.predictor.forward(g, training=False)
    return Pose(t_pred[0].astype(np.float64), quat_exp(q_pred[0].astype(np.float64)))


def evaluate(
    model: PoseRegressor,
    manifest_path,
    enc_cfg: EncoderConfig,
    preproc: PreprocessCfg,
    encode_seed: int,
    trans_thresh: float = 5.0,
    rot_thresh: float = 5.0,
    split: str = "test",
    predictor=None,
) -> EvalReport:
    """Per-scan translation/orientation errors and the relocalization rate.

    `predictor` overrides the model path (used by the oracle/baseline
    hooks); it maps (scan_id, cloud, gt_pose) -> Pose.
    """
    report = EvalReport([], [], [], [], [], trans_thresh, rot_thresh)
    for scan_id, cloud, gt in dataset_scans(manifest_path, split):
        if predictor is not None:
            pred = predictor(scan_id, cloud, gt)
        else:
            pred = predict_pose(
                model, cloud, enc_cfg, preproc, rng.derive(encode_seed, scan_id)
            )
        report.scan_ids.append(scan_id)
        report.t_errors.append(translation_error_m(pred, gt))
        report.r_errors.append(orientation_error_deg(pred.q, gt.q))
        report.pred_positions.append(pred.t.copy())
        report.gt_positions.append(gt.t.copy())
    return report


def constant_mean_pose(poses: list[Pose]) -> Pose:
    """Mean translation and (chordal) mean orientation of a pose list."""
    t = np.mean([p.t for p in poses], axis=0)
    qsum = np.sum([p.q.as_array() for p in poses], axis=0)
    if np.linalg.norm(qsum) < 1e-9:
        q = Quaternion.identity()
    else:
        q = Quaternion.normalized(*qsum)
    return Pose(t, q)


def evaluate_constant_baseline(
    manifest_path, trans_thresh: float, rot_thresh: float
) -> EvalReport:
    """Floor reference: always predict the mean training pose."""
    train_poses = [pose for _, _, pose in dataset_scans(manifest_path, "train")]
    mean_pose = constant_mean_pose(train_poses)
    return evaluate(
        None,
        manifest_path,
        None,
        None,
        0,
        trans_thresh,
        rot_thresh,
        predictor=lambda sid, cloud, gt: mean_pose,
    )


def save_summary(path, report: EvalReport) -> None:
    Path(path).write_text(report.summary())
