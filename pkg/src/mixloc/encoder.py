"""Frozen scene-agnostic local descriptor extractor.

Each sampled point gets 8 handcrafted neighborhood features (centroid
offset, covariance shape, relative height, density) which a fixed seeded
near-orthogonal projection lifts to dimension d, squashed with tanh. The
whole map is deterministic and configuration-hashed: a buffer built with
one config cannot silently be consumed with another.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import EmptyScan
from .geometry import Pose
from .kernels import neighbor_moments
from .pointcloud import PointCloud, PreprocessCfg, farthest_point_sample

RAW_FEATURE_COUNT = 11
# offsets normalized by the radius, height by a nominal 10 m scene height,
# point coordinates by a nominal 25 m sensing range
_HEIGHT_SCALE = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    neighborhood_radius: float = 2.0
    projection_seed: int = 0
    position_scale: float = 0.04

    def __post_init__(self):
        if self.d < RAW_FEATURE_COUNT:
            raise ValueError(f"d must be >= {RAW_FEATURE_COUNT}, got {self.d}")


@dataclass
class DescriptorSet:
    """M x d descriptor matrix for one scan with its ground-truth pose."""

    F: np.ndarray
    pose: Pose
    scan_id: int

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=np.float32)
        if self.F.ndim != 2:
            raise ValueError("F must be 2-D")
        if not np.all(np.isfinite(self.F)):
            raise ValueError("descriptors contain NaN/Inf")


def encoder_hash(cfg: EncoderConfig, preproc: PreprocessCfg, m: int) -> int:
    """64-bit hash over everything that defines the frozen descriptor map."""
    blob = struct.pack(
        "<idddqddidqq",
        cfg.d,
        cfg.neighborhood_radius,
        cfg.position_scale,
        _HEIGHT_SCALE,
        cfg.projection_seed,
        preproc.voxel,
        preproc.ground.inlier_dist,
        preproc.ground.iterations,
        preproc.ground.max_tilt_deg,
        preproc.ground.seed,
        m,
    )
    h = rng.mix64(len(blob))
    for i in range(0, len(blob), 8):
        chunk = int.from_bytes(blob[i : i + 8].ljust(8, b"\0"), "little")
        h = rng.mix64(h ^ chunk)
    return h


def raw_point_features(
    cloud: PointCloud, indices: np.ndarray, radius: float, position_scale: float = 0.04
) -> np.ndarray:
    """(M, 11) geometric features for the given point indices.

    Columns 0-7: centroid offset xyz (radius-normalized), linearity,
    planarity, sphericity, height above cloud minimum (scaled), neighbor
    fraction. Columns 8-10: the point's own sensor-frame coordinates
    (scaled); without them the descriptor multiset is nearly blind to
    sensor position and pose regression has nothing to work with.
    Isolated points (no neighbor within the radius) get all-zero offset,
    shape and density entries.
    """
    pts = np.ascontiguousarray(cloud.points)
    n = cloud.count
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    counts, s1, s2 = neighbor_moments(pts, idx, radius)

    m = len(idx)
    feats = np.zeros((m, RAW_FEATURE_COUNT), dtype=np.float64)
    k = counts.astype(np.float64)
    has = counts > 0
    off = np.zeros((m, 3))
    off[has] = s1[has] / k[has, None]
    feats[:, 0:3] = off / radius

    full = counts >= 3
    if full.any():
        mean = s1[full] / k[full, None]
        cov = s2[full] / k[full, None, None] - mean[:, :, None] * mean[:, None, :]
        ev = np.linalg.eigvalsh(cov)  # ascending
        ev = np.maximum(ev, 0.0)
        lam1 = ev[:, 2]
        ok = lam1 > 1e-12
        shape = np.zeros((int(full.sum()), 3))
        shape[ok, 0] = (ev[ok, 2] - ev[ok, 1]) / lam1[ok]  # linearity
        shape[ok, 1] = (ev[ok, 1] - ev[ok, 0]) / lam1[ok]  # planarity
        shape[ok, 2] = ev[ok, 0] / lam1[ok]  # sphericity
        feats[full, 3:6] = shape

    zmin = pts[:, 2].min()
    feats[:, 6] = (pts[idx, 2] - zmin) * _HEIGHT_SCALE
    feats[:, 7] = counts / max(n - 1, 1)
    feats[:, 8:11] = pts[idx] * position_scale
    return feats


def projection_matrix(cfg: EncoderConfig) -> np.ndarray:
    """(d, 8) seeded projection with orthonormal columns.

    Gram-Schmidt is done by hand (not LAPACK) so the matrix is reproducible
    from the seed on any platform.
    """
    stream = rng.Stream(rng.derive(cfg.projection_seed, 404))
    g = stream.normal((cfg.d, RAW_FEATURE_COUNT))
    q = np.empty_like(g)
    for j in range(RAW_FEATURE_COUNT):
        v = g[:, j].copy()
        for i in range(j):
            v -= (q[:, i] @ v) * q[:, i]
        q[:, j] = v / np.linalg.norm(v)
    return q


def encode(
    cloud: PointCloud,
    cfg: EncoderConfig,
    m: int,
    fps_seed: int,
    pose: Pose | None = None,
    scan_id: int = 0,
) -> DescriptorSet:
    """h: preprocessed cloud -> (M, d) descriptors at FPS-sampled points."""
    if cloud.count == 0:
        raise EmptyScan("cannot encode an empty cloud")
    idx = farthest_point_sample(cloud, m, fps_seed)
    raw = raw_point_features(cloud, idx, cfg.neighborhood_radius, cfg.position_scale)
    proj = projection_matrix(cfg)
    descr = np.tanh(raw @ proj.T)
    return DescriptorSet(
        descr.astype(np.float32), pose if pose is not None else Pose.identity(), scan_id
    )
