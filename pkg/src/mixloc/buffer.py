"""Training buffer: the frozen encoder run once over a whole scene, plus
batch serving with positive/negative mining by ground-truth pose distance."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .encoder import DescriptorSet, EncoderConfig, encode, encoder_hash
from .errors import EncoderMismatch, NoPositives
from .geometry import Pose, Quaternion
from .pointcloud import PreprocessCfg, preprocess
from .rng import Stream
from .synth import dataset_scans

log = logging.getLogger(__name__)

BUFFER_MAGIC = b"FMBF"
BUFFER_VERSION = 1


@dataclass(frozen=True)
class MiningConfig:
    """Pose-distance thresholds for contrastive pair mining.

    d_pos = 0 is allowed and simply yields no positives (NoPositives at
    sampling time), which is the documented misconfiguration signal.
    """

    d_pos: float = 2.0
    d_neg: float = 10.0

    def __post_init__(self):
        if not (0 <= self.d_pos < self.d_neg):
            raise ValueError("need 0 <= d_pos < d_neg")


@dataclass
class TrainingBuffer:
    entries: list[DescriptorSet]
    encoder_hash: int
    m: int
    d: int

    def __post_init__(self):
        ids = [e.scan_id for e in self.entries]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError("entry scan_ids must be unique and sorted")
        for e in self.entries:
            if e.F.shape != (self.m, self.d):
                raise ValueError(f"entry {e.scan_id} has shape {e.F.shape}")

    def __len__(self) -> int:
        return len(self.entries)

    def translations(self) -> np.ndarray:
        return np.stack([e.pose.t for e in self.entries])

    def descriptor_stack(self) -> np.ndarray:
        return np.stack([e.F for e in self.entries])

    def verify_hash(self, expected: int) -> None:
        if self.encoder_hash != expected:
            raise EncoderMismatch(
                f"buffer encoder hash {self.encoder_hash:#x} != expected {expected:#x}"
            )


def build_buffer(
    manifest_path,
    enc_cfg: EncoderConfig,
    preproc: PreprocessCfg,
    m: int,
    seed: int,
    split: str = "train",
) -> TrainingBuffer:
    """One DescriptorSet per scan of the split, in scan_id order."""
    entries = []
    for scan_id, cloud, pose in dataset_scans(manifest_path, split):
        clean = preprocess(cloud, preproc)
        fps_seed = rng.derive(seed, scan_id)
        entries.append(encode(clean, enc_cfg, m, fps_seed, pose=pose, scan_id=scan_id))
        if len(entries) % 200 == 0:
            log.info("encoded %d scans", len(entries))
    return TrainingBuffer(entries, encoder_hash(enc_cfg, preproc, m), m, enc_cfg.d)


def save_buffer(path, buf: TrainingBuffer) -> None:
    """FMBF: magic, u32 version, u64 encoder hash, u32 n/M/d, then per entry
    u32 scan_id, 7 f64 pose (t, q wxyz), M*d LE f32 descriptors."""
    with open(path, "wb") as f:
        f.write(BUFFER_MAGIC)
        f.write(struct.pack("<IQIII", BUFFER_VERSION, buf.encoder_hash, len(buf), buf.m, buf.d))
        for e in buf.entries:
            f.write(struct.pack("<I", e.scan_id))
            f.write(
                struct.pack("<7d", *e.pose.t, e.pose.q.w, e.pose.q.x, e.pose.q.y, e.pose.q.z)
            )
            f.write(e.F.astype("<f4").tobytes())


def load_buffer(path) -> TrainingBuffer:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != BUFFER_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, enc_hash, n, m, d = struct.unpack("<IQIII", f.read(24))
        if version != BUFFER_VERSION:
            raise ValueError(f"{path}: unsupported buffer version {version}")
        entries = []
        for _ in range(n):
            (scan_id,) = struct.unpack("<I", f.read(4))
            pose_vals = struct.unpack("<7d", f.read(56))
            data = f.read(m * d * 4)
            F = np.frombuffer(data, dtype="<f4").reshape(m, d).copy()
            pose = Pose(np.array(pose_vals[:3]), Quaternion.normalized(*pose_vals[3:]))
            entries.append(DescriptorSet(F, pose, scan_id))
    return TrainingBuffer(entries, enc_hash, m, d)


def buffer_file_size(n_entries: int, m: int, d: int) -> int:
    """Exact FMBF byte size: 28-byte header + per entry (4 + 56 + M*d*4)."""
    return 28 + n_entries * (m * d * 4 + 60)


@dataclass
class Batch:
    query: np.ndarray  # (B, M, d) f32
    positive: np.ndarray
    negative: np.ndarray
    t_gt: np.ndarray  # (B, 3)
    logq_gt: np.ndarray  # (B, 3)
    query_ids: np.ndarray  # (B,)
    neg_fallback: np.ndarray  # (B,) bool


class BatchSampler:
    """Precomputes per-entry positive/negative candidate lists once."""

    def __init__(self, buf: TrainingBuffer, mining: MiningConfig):
        self.buf = buf
        self.mining = mining
        t = buf.translations()
        diff = t[:, None, :] - t[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        np.fill_diagonal(dist, np.inf)
        self.pos_lists = [np.flatnonzero(dist[i] <= mining.d_pos) for i in range(len(buf))]
        np.fill_diagonal(dist, -np.inf)
        self.neg_lists = [np.flatnonzero(dist[i] >= mining.d_neg) for i in range(len(buf))]
        self.farthest = np.argmax(dist, axis=1)
        self.has_positive = np.array([len(p) > 0 for p in self.pos_lists])
        self.logq = np.stack([e.pose.log_q() for e in buf.entries])
        self.t = t

    def sample(
        self, batch_size: int, stream: Stream, gather_negatives: bool = True
    ) -> Batch:
        """Mining draws (query, positive, negative) always happen in the
        same order so any two runs over the same buffer consume identical
        RNG; `gather_negatives=False` only skips materializing the negative
        descriptor tensor for regularizers that never read it."""
        if not self.has_positive.any():
            raise NoPositives(
                f"no buffer entry has a positive within d_pos={self.mining.d_pos}"
            )
        n = len(self.buf)
        q_idx = np.empty(batch_size, dtype=np.int64)
        p_idx = np.empty(batch_size, dtype=np.int64)
        n_idx = np.empty(batch_size, dtype=np.int64)
        fallback = np.zeros(batch_size, dtype=bool)
        for b in range(batch_size):
            for _ in range(100_000):
                q = stream.below(n)
                if self.has_positive[q]:
                    break
            else:
                raise NoPositives("query resampling failed to find a positive")
            q_idx[b] = q
            plist = self.pos_lists[q]
            p_idx[b] = plist[stream.below(len(plist))]
            nlist = self.neg_lists[q]
            if len(nlist) > 0:
                n_idx[b] = nlist[stream.below(len(nlist))]
            else:
                n_idx[b] = self.farthest[q]
                fallback[b] = True
        if fallback.any():
            log.warning(
                "%d/%d negatives fell back to the farthest entry (d_neg=%g too large "
                "for this scene)",
                int(fallback.sum()),
                batch_size,
                self.mining.d_neg,
            )
        gather = lambda idx: np.stack([self.buf.entries[i].F for i in idx])
        return Batch(
            query=gather(q_idx),
            positive=gather(p_idx),
            negative=gather(n_idx) if gather_negatives else np.empty((0,)),
            t_gt=self.t[q_idx],
            logq_gt=self.logq[q_idx],
            query_ids=q_idx,
            neg_fallback=fallback,
        )


def sample_batch(
    buf: TrainingBuffer, batch_size: int, mining: MiningConfig, stream: Stream
) -> Batch:
    if len(buf) < 2:
        raise NoPositives("buffer needs at least 2 entries to mine pairs")
    return BatchSampler(buf, mining).sample(batch_size, stream)
