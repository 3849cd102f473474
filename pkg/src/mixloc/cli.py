"""Command-line entry point: dataset generation, buffer building, training,
evaluation, trajectory plotting and the kernel benchmark.

Option precedence is defaults < config file (key=value lines) < flags;
`--print-config` dumps the fully resolved configuration and exits. Exit
codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import rng
from .buffer import build_buffer, buffer_file_size, load_buffer, save_buffer
from .encoder import EncoderConfig, encoder_hash
from .errors import DataError, NumericalError
from .geometry import load_poses
from .losses import LossConfig
from .nn import ModelConfig, load_checkpoint, save_checkpoint
from .optim import INDOOR_LR, OUTDOOR_LR
from .pipeline import (
    TrainConfig,
    evaluate,
    evaluate_constant_baseline,
    train,
)
from .buffer import MiningConfig
from .pointcloud import GroundCfg, PreprocessCfg
from .synth import DatasetSpec, SensorCfg, generate_dataset

log = logging.getLogger("mixloc")

# (dest, flag, type, default, help) per subcommand; None types are booleans
_SPECS: dict[str, list[tuple]] = {
    "gen": [
        ("seed", "--seed", int, 7, "dataset seed"),
        ("extent", "--extent", float, 50.0, "world side length, meters"),
        ("landmarks", "--landmarks", int, 40, "number of landmarks"),
        ("train_poses", "--train-poses", int, 2000, "training scan count"),
        ("test_poses", "--test-poses", int, 200, "test scan count"),
        ("spacing", "--spacing", float, 1.0, "trajectory sampling distance, meters"),
        ("max_range", "--max-range", float, 60.0, "sensor range, meters"),
        ("noise", "--noise", float, 0.02, "sensor noise sigma, meters"),
        ("points", "--points", int, 4096, "surface samples per scan"),
        ("out", "--out", str, "dataset", "output directory"),
    ],
    "encode": [
        ("dataset", "--dataset", str, "dataset", "dataset directory or manifest"),
        ("out", "--out", str, "buffer.fmbf", "buffer output path"),
        ("m", "--m", int, 512, "points kept per scan (FPS)"),
        ("d", "--d", int, 32, "descriptor dimension"),
        ("seed", "--seed", int, 0, "per-scan FPS seed root"),
        ("radius", "--radius", float, 2.0, "feature neighborhood radius, meters"),
        ("proj_seed", "--proj-seed", int, 0, "descriptor projection seed"),
        ("voxel", "--voxel", float, 0.5, "voxel size, meters"),
        ("split", "--split", str, "train", "dataset split to encode"),
    ],
    "train": [
        ("buffer", "--buffer", str, "buffer.fmbf", "training buffer path"),
        ("reg", "--reg", str, "barlow", "none|barlow|triplet|ntxent|siglip"),
        ("epochs", "--epochs", int, 30, "training epochs"),
        ("batch", "--batch", int, 256, "batch size"),
        ("lr", "--lr", float, 0.005, "one-cycle peak learning rate"),
        ("lr_final", "--lr-final", float, 1e-6, "final learning rate"),
        ("alpha", "--alpha", float, 1.0, "orientation loss weight"),
        ("reg_weight", "--reg-weight", float, 1.0, "regularizer weight"),
        ("mu", "--mu", float, 0.005, "off-diagonal weight (barlow)"),
        ("margin", "--margin", float, 0.05, "triplet margin"),
        ("tau", "--tau", float, 0.07, "softmax temperature (ntxent)"),
        ("l", "--l", int, 128, "global descriptor dimension"),
        ("mixer_layers", "--mixer-layers", int, 1, "mixer layer count"),
        ("trunk", "--trunk", int, 6, "pose predictor depth"),
        ("no_residual", "--no-residual", None, False, "disable mixing residuals"),
        ("d_pos", "--d-pos", float, 2.0, "positive mining radius, meters"),
        ("d_neg", "--d-neg", float, 10.0, "negative mining distance, meters"),
        ("seed", "--seed", int, 0, "training seed"),
        ("out", "--out", str, "model.fmck", "checkpoint output path"),
        ("report", "--report", str, "", "training report CSV path (optional)"),
    ],
    "eval": [
        ("ckpt", "--ckpt", str, "model.fmck", "checkpoint path"),
        ("dataset", "--dataset", str, "dataset", "dataset directory or manifest"),
        ("split", "--split", str, "test", "dataset split to evaluate"),
        ("profile", "--profile", str, "outdoor", "threshold profile: outdoor|indoor"),
        ("trans_thresh", "--trans-thresh", float, None, "translation threshold, meters"),
        ("rot_thresh", "--rot-thresh", float, 5.0, "rotation threshold, degrees"),
        ("seed", "--seed", int, 0, "per-scan FPS seed root (must match encode)"),
        ("radius", "--radius", float, 2.0, "feature neighborhood radius, meters"),
        ("proj_seed", "--proj-seed", int, 0, "descriptor projection seed"),
        ("voxel", "--voxel", float, 0.5, "voxel size, meters"),
        ("out", "--out", str, "eval.csv", "per-scan report CSV path"),
        ("summary", "--summary", str, "", "summary key=value output path (optional)"),
        ("oracle", "--oracle", None, False, "test hook: predict ground truth"),
        ("baseline", "--baseline", None, False, "predict the constant mean train pose"),
    ],
    "plot": [
        ("eval_csv", "--eval-csv", str, "eval.csv", "per-scan eval CSV"),
        ("gt_poses", "--gt-poses", str, "", "ground-truth pose file (optional)"),
        ("out", "--out", str, "trajectory.svg", "SVG output path"),
    ],
    "bench": [
        ("n", "--n", int, 3000, "cloud size"),
        ("m", "--m", int, 512, "query count"),
        ("radius", "--radius", float, 2.0, "neighborhood radius"),
        ("repeats", "--repeats", int, 3, "timing repeats"),
        ("seed", "--seed", int, 0, "cloud seed"),
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixloc",
        description="Map-free LiDAR localization pipeline on synthetic scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate a synthetic dataset (scans + ground-truth poses)",
        "encode": "build the descriptor training buffer from a dataset",
        "train": "train the pose regressor from a buffer",
        "eval": "evaluate a checkpoint on a dataset split",
        "plot": "render ground-truth vs predicted positions as SVG",
        "bench": "benchmark compiled vs pure-python point kernels",
    }
    for cmd, spec in _SPECS.items():
        p = sub.add_parser(cmd, help=helps[cmd])
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument(
            "--print-config", action="store_true", help="dump resolved config and exit"
        )
        for dest, flag, typ, default, hlp in spec:
            if typ is None:
                p.add_argument(flag, dest=dest, action="store_const", const=True,
                               default=None, help=hlp)
            else:
                p.add_argument(flag, dest=dest, type=typ, default=None,
                               help=f"{hlp} (default {default})")
    return p


def _resolve(cmd: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    spec = {dest: (typ, default) for dest, _, typ, default, _ in _SPECS[cmd]}
    resolved = {dest: default for dest, (_, default) in spec.items()}
    if args.config:
        for line in Path(args.config).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in spec:
                raise UsageError(f"unknown config key {key!r} for command {cmd!r}")
            typ = spec[key][0]
            resolved[key] = (val.lower() in ("1", "true", "yes")) if typ is None else typ(val)
    for dest in spec:
        val = getattr(args, dest)
        if val is not None:
            resolved[dest] = val
    return resolved


class UsageError(Exception):
    pass


def _print_config(cmd: str, cfg: dict) -> None:
    print(f"command = {cmd}")
    for k in sorted(cfg):
        print(f"{k} = {cfg[k]}")


def cmd_gen(cfg: dict) -> int:
    spec = DatasetSpec(
        seed=cfg["seed"],
        extent=cfg["extent"],
        n_landmarks=cfg["landmarks"],
        train_poses=cfg["train_poses"],
        test_poses=cfg["test_poses"],
        spacing=cfg["spacing"],
        sensor=SensorCfg(cfg["max_range"], cfg["noise"], cfg["points"]),
    )
    t0 = time.perf_counter()
    manifest = generate_dataset(cfg["out"], spec)
    print(
        f"wrote {spec.train_poses} train + {spec.test_poses} test scans "
        f"to {cfg['out']} in {time.perf_counter() - t0:.1f}s"
    )
    print(f"manifest: {manifest}")
    return 0


def _manifest_path(dataset: str) -> Path:
    p = Path(dataset)
    return p if p.is_file() else p / "manifest.txt"


def cmd_encode(cfg: dict) -> int:
    enc_cfg = EncoderConfig(cfg["d"], cfg["radius"], cfg["proj_seed"])
    preproc = PreprocessCfg(GroundCfg(), cfg["voxel"])
    t0 = time.perf_counter()
    buf = build_buffer(
        _manifest_path(cfg["dataset"]), enc_cfg, preproc, cfg["m"], cfg["seed"], cfg["split"]
    )
    save_buffer(cfg["out"], buf)
    elapsed = time.perf_counter() - t0
    print(
        f"buffer: {len(buf)} entries, M={buf.m}, d={buf.d}, "
        f"encoder_hash={buf.encoder_hash:#018x}"
    )
    print(f"size: {buffer_file_size(len(buf), buf.m, buf.d)} bytes, elapsed {elapsed:.1f}s")
    return 0


def cmd_train(cfg: dict) -> int:
    buf = load_buffer(cfg["buffer"])
    model_cfg = ModelConfig(
        m=buf.m,
        d=buf.d,
        l=cfg["l"],
        n_mixer_layers=cfg["mixer_layers"],
        n_trunk=cfg["trunk"],
        residual=not cfg["no_residual"],
    )
    train_cfg = TrainConfig(
        batch_size=cfg["batch"],
        epochs=cfg["epochs"],
        lr_init=cfg["lr"],
        lr_final=cfg["lr_final"],
        seed=cfg["seed"],
        loss=LossConfig(
            alpha=cfg["alpha"],
            mu=cfg["mu"],
            margin=cfg["margin"],
            tau=cfg["tau"],
            reg_kind=cfg["reg"],
            reg_weight=cfg["reg_weight"],
        ),
        mining=MiningConfig(cfg["d_pos"], cfg["d_neg"]),
    )
    model, report = train(buf, model_cfg, train_cfg)
    meta = {"encoder_hash": f"{buf.encoder_hash:#018x}", "reg": cfg["reg"]}
    save_checkpoint(cfg["out"], model, meta)
    if cfg["report"]:
        report.write_csv(cfg["report"])
    print(f"train wall time: {report.wall_s:.1f}s over {len(report.steps)} steps")
    if report.epoch_ema:
        print(f"final loss EMA: {report.final_ema():.4f}")
    print(f"checkpoint: {cfg['out']}")
    return 0


def cmd_eval(cfg: dict) -> int:
    if cfg["trans_thresh"] is None:
        cfg["trans_thresh"] = 0.25 if cfg["profile"] == "indoor" else 5.0
    manifest = _manifest_path(cfg["dataset"])
    if cfg["baseline"]:
        report = evaluate_constant_baseline(manifest, cfg["trans_thresh"], cfg["rot_thresh"])
    elif cfg["oracle"]:
        report = evaluate(
            None, manifest, None, None, 0,
            cfg["trans_thresh"], cfg["rot_thresh"], cfg["split"],
            predictor=lambda sid, cloud, gt: gt,
        )
    else:
        model, meta = load_checkpoint(cfg["ckpt"])
        enc_cfg = EncoderConfig(model.cfg.d, cfg["radius"], cfg["proj_seed"])
        preproc = PreprocessCfg(GroundCfg(), cfg["voxel"])
        expected = encoder_hash(enc_cfg, preproc, model.cfg.m)
        recorded = int(meta.get("encoder_hash", "0"), 16)
        if recorded and recorded != expected:
            raise DataError(
                f"encoder config mismatch: checkpoint recorded {recorded:#018x}, "
                f"flags give {expected:#018x}"
            )
        report = evaluate(
            model, manifest, enc_cfg, preproc, cfg["seed"],
            cfg["trans_thresh"], cfg["rot_thresh"], cfg["split"],
        )
    report.write_csv(cfg["out"])
    if cfg["summary"]:
        Path(cfg["summary"]).write_text(report.summary())
    print(report.summary(), end="")
    return 0


def _read_eval_csv(path):
    import csv as _csv

    rows = []
    with open(path) as f:
        for row in _csv.DictReader(f):
            rows.append(row)
    return rows


def cmd_plot(cfg: dict) -> int:
    rows = _read_eval_csv(cfg["eval_csv"])
    if not rows:
        raise DataError(f"{cfg['eval_csv']}: no rows")
    pred = np.array([[float(r["pred_x"]), float(r["pred_y"])] for r in rows])
    if cfg["gt_poses"]:
        gt = np.array([p.t[:2] for p in load_poses(cfg["gt_poses"])])
        if len(gt) != len(pred):
            raise DataError("gt pose count does not match eval CSV rows")
    else:
        gt = np.array([[float(r["gt_x"]), float(r["gt_y"])] for r in rows])
    write_trajectory_svg(cfg["out"], gt, pred)
    print(f"wrote {cfg['out']} ({2 * len(rows)} markers)")
    return 0


def write_trajectory_svg(path, gt: np.ndarray, pred: np.ndarray) -> None:
    """Scatter of ground-truth (dark blue) vs predicted (red) positions,
    with a star at the starting position."""
    size, pad = 640.0, 50.0
    all_xy = np.vstack([gt, pred])
    lo = all_xy.min(axis=0)
    hi = all_xy.max(axis=0)
    span = max(float((hi - lo).max()), 1e-6)

    def sx(x):
        return pad + (x - lo[0]) / span * (size - 2 * pad)

    def sy(y):
        return size - pad - (y - lo[1]) / span * (size - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect x="1" y="1" width="{size - 2:.0f}" height="{size - 2:.0f}" '
        'fill="white" stroke="#999"/>',
    ]
    for x, y in gt:
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="#00008b"/>')
    for x, y in pred:
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="#d62728"/>')

    cx, cy = sx(gt[0, 0]), sy(gt[0, 1])
    star = []
    for i in range(10):
        r = 12.0 if i % 2 == 0 else 5.0
        ang = -np.pi / 2 + i * np.pi / 5
        star.append(f"{cx + r * np.cos(ang):.2f},{cy + r * np.sin(ang):.2f}")
    parts.append(f'<polygon points="{" ".join(star)}" fill="#ffbf00" stroke="black"/>')

    parts.append(f'<rect x="{pad:.0f}" y="14" width="12" height="12" fill="#00008b"/>')
    parts.append(f'<text x="{pad + 18:.0f}" y="25" font-size="14">ground truth</text>')
    parts.append(f'<rect x="{pad + 130:.0f}" y="14" width="12" height="12" fill="#d62728"/>')
    parts.append(f'<text x="{pad + 148:.0f}" y="25" font-size="14">predicted</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def cmd_bench(cfg: dict) -> int:
    from .bench import format_table, run_benchmark

    rows = run_benchmark(cfg["n"], cfg["m"], cfg["radius"], cfg["repeats"], cfg["seed"])
    print(format_table(rows, cfg["n"], cfg["m"]))
    return 0


_HANDLERS = {
    "gen": cmd_gen,
    "encode": cmd_encode,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        cfg = _resolve(args.command, args)
        if args.print_config:
            _print_config(args.command, cfg)
            return 0
        return _HANDLERS[args.command](cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
