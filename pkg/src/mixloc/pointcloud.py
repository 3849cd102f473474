"""Scan container and the preprocessing chain applied before encoding:
RANSAC ground removal, voxel-grid downsampling, farthest point sampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import DegenerateCloud
from .kernels import fps_select

SCAN_MAGIC = b"FMPC"
SCAN_VERSION = 1


@dataclass
class PointCloud:
    """(N, 3) float64 point set in the sensor frame.

    `history` records the preprocessing steps applied (including degenerate
    outcomes such as "ground:no_plane"), so downstream stages can tell what
    a cloud has been through.
    """

    points: np.ndarray
    history: tuple[str, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain NaN/Inf")
        self.points = pts

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def with_history(self, tag: str) -> "PointCloud":
        return PointCloud(self.points, self.history + (tag,))


@dataclass(frozen=True)
class GroundCfg:
    inlier_dist: float = 0.2
    iterations: int = 100
    max_tilt_deg: float = 30.0
    seed: int = 0


@dataclass(frozen=True)
class PreprocessCfg:
    ground: GroundCfg = field(default_factory=GroundCfg)
    voxel: float = 0.5


def remove_ground(cloud: PointCloud, cfg: GroundCfg = GroundCfg()) -> PointCloud:
    """Drop inliers of the dominant near-horizontal RANSAC plane.

    Candidate planes must have a normal within cfg.max_tilt_deg of vertical,
    which keeps walls from being removed. If no valid plane is found the
    input is returned with a "ground:no_plane" history tag; if removal would
    empty the cloud the input is returned with "ground:kept_all".
    """
    pts = cloud.points
    n = cloud.count
    if n < 3:
        raise DegenerateCloud(f"ground removal needs >= 3 points, got {n}")

    min_nz = np.cos(np.radians(cfg.max_tilt_deg))
    stream = rng.Stream(rng.derive(cfg.seed, n))
    best_count = 0
    best_inliers = None
    for _ in range(cfg.iterations):
        i, j, k = stream.below(n), stream.below(n), stream.below(n)
        if i == j or j == k or i == k:
            continue
        normal = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        if abs(normal[2]) < min_nz:
            continue
        dist = np.abs((pts - pts[i]) @ normal)
        count = int(np.count_nonzero(dist <= cfg.inlier_dist))
        if count > best_count:
            best_count = count
            best_inliers = dist <= cfg.inlier_dist

    if best_inliers is None:
        return cloud.with_history("ground:no_plane")
    keep = ~best_inliers
    if not keep.any():
        return cloud.with_history("ground:kept_all")
    return PointCloud(pts[keep], cloud.history + ("ground:removed",))


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Centroid per occupied voxel, output in lexicographic voxel order."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if cloud.count == 0:
        return cloud.with_history(f"voxel:{voxel:g}")
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    sums = np.zeros((uniq.shape[0], 3), dtype=np.float64)
    np.add.at(sums, inverse, cloud.points)
    counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(np.float64)
    return PointCloud(sums / counts[:, None], cloud.history + (f"voxel:{voxel:g}",))


def preprocess(cloud: PointCloud, cfg: PreprocessCfg = PreprocessCfg()) -> PointCloud:
    return voxel_downsample(remove_ground(cloud, cfg.ground), cfg.voxel)


def farthest_point_sample(cloud: PointCloud, m: int, seed: int) -> np.ndarray:
    """Exactly m indices: seeded first pick, then greedy max-min selection.

    Squared distances; ties break to the lowest index. When the cloud has
    fewer than m points the tail is filled by seeded resampling (with
    replacement) from the already-selected indices, so callers always get a
    rectangular sample.
    """
    n = cloud.count
    if n < 1:
        raise DegenerateCloud("cannot sample an empty cloud")
    if m < 1:
        raise ValueError("m must be >= 1")
    first = rng.rand_u64(seed, 0) % n
    pts = np.ascontiguousarray(cloud.points)
    sel = fps_select(pts, min(m, n), first)
    if m <= n:
        return sel
    pad = np.empty(m - n, dtype=np.int64)
    for i in range(m - n):
        pad[i] = sel[rng.rand_u64(seed, i + 1) % n]
    return np.concatenate([sel, pad])


def save_scan(path, cloud: PointCloud) -> None:
    """Binary scan format: magic FMPC, u32 version, u32 N, N*3 LE f32."""
    with open(path, "wb") as f:
        f.write(SCAN_MAGIC)
        f.write(struct.pack("<II", SCAN_VERSION, cloud.count))
        f.write(cloud.points.astype("<f4").tobytes())


def load_scan(path) -> PointCloud:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SCAN_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {SCAN_MAGIC!r}")
        version, n = struct.unpack("<II", f.read(8))
        if version != SCAN_VERSION:
            raise ValueError(f"{path}: unsupported scan version {version}")
        data = f.read(n * 12)
        if len(data) != n * 12:
            raise ValueError(f"{path}: truncated scan file")
        pts = np.frombuffer(data, dtype="<f4").reshape(n, 3).astype(np.float64)
    return PointCloud(pts)


def save_xyz(path, cloud: PointCloud) -> None:
    """ASCII interchange: three decimals per line."""
    with open(path, "w") as f:
        for p in cloud.points:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def load_xyz(path) -> PointCloud:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rows.append([float(v) for v in line.split()[:3]])
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))
