"""Synthetic scene harness: a seeded world of geometric landmarks, smooth
random-walk trajectories, and surface-sampled scans with Gaussian noise.

Everything derives from integer seeds through the portable counter RNG, so
datasets regenerate bit-identically. Scans are synthesized by area-weighted
surface sampling (no occlusion): the downstream regressor consumes point
statistics, not realistic beam returns.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import EmptyScan
from .geometry import Pose, Quaternion, load_poses, save_poses
from .pointcloud import PointCloud, load_scan, save_scan

SENSOR_HEIGHT = 1.4


@dataclass(frozen=True)
class SensorCfg:
    max_range: float = 60.0
    noise: float = 0.02
    points: int = 4096


@dataclass(frozen=True)
class Box:
    """Upright cuboid; thin boxes double as walls."""

    cx: float
    cy: float
    yaw: float
    lx: float
    ly: float
    height: float

    def area(self) -> float:
        return 2.0 * (self.lx + self.ly) * self.height + self.lx * self.ly

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map (k, 3) uniforms onto side faces and top, area-weighted."""
        side_x = 2.0 * self.lx * self.height
        side_y = 2.0 * self.ly * self.height
        top = self.lx * self.ly
        total = side_x + side_y + top
        pick = u[:, 0] * total
        a, b = u[:, 1], u[:, 2]
        x = np.empty(len(u))
        y = np.empty(len(u))
        z = np.empty(len(u))
        on_x = pick < side_x  # faces normal to local y
        on_y = (pick >= side_x) & (pick < side_x + side_y)
        on_t = pick >= side_x + side_y
        sgn_x = np.where(pick[on_x] < side_x / 2, -1.0, 1.0)
        x[on_x] = (a[on_x] - 0.5) * self.lx
        y[on_x] = sgn_x * self.ly / 2
        z[on_x] = b[on_x] * self.height
        sgn_y = np.where(pick[on_y] < side_x + side_y / 2, -1.0, 1.0)
        x[on_y] = sgn_y * self.lx / 2
        y[on_y] = (a[on_y] - 0.5) * self.ly
        z[on_y] = b[on_y] * self.height
        x[on_t] = (a[on_t] - 0.5) * self.lx
        y[on_t] = (b[on_t] - 0.5) * self.ly
        z[on_t] = self.height
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.stack(
            [self.cx + c * x - s * y, self.cy + s * x + c * y, z], axis=1
        )

    def surface_distance(self, pts: np.ndarray) -> np.ndarray:
        """|signed distance| to the cuboid boundary."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        dx = pts[:, 0] - self.cx
        dy = pts[:, 1] - self.cy
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        lz = pts[:, 2] - self.height / 2
        q = np.stack(
            [np.abs(lx) - self.lx / 2, np.abs(ly) - self.ly / 2, np.abs(lz) - self.height / 2],
            axis=1,
        )
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Pillar:
    """Vertical cylinder (side surface and top disk)."""

    cx: float
    cy: float
    radius: float
    height: float

    def area(self) -> float:
        return 2.0 * np.pi * self.radius * self.height + np.pi * self.radius**2

    def sample(self, u: np.ndarray) -> np.ndarray:
        side = 2.0 * np.pi * self.radius * self.height
        total = side + np.pi * self.radius**2
        on_side = u[:, 0] * total < side
        ang = 2.0 * np.pi * u[:, 1]
        x = np.empty(len(u))
        y = np.empty(len(u))
        z = np.empty(len(u))
        x[on_side] = self.radius * np.cos(ang[on_side])
        y[on_side] = self.radius * np.sin(ang[on_side])
        z[on_side] = u[on_side, 2] * self.height
        r = self.radius * np.sqrt(u[~on_side, 2])
        x[~on_side] = r * np.cos(ang[~on_side])
        y[~on_side] = r * np.sin(ang[~on_side])
        z[~on_side] = self.height
        return np.stack([self.cx + x, self.cy + y, z], axis=1)

    def surface_distance(self, pts: np.ndarray) -> np.ndarray:
        dr = np.hypot(pts[:, 0] - self.cx, pts[:, 1] - self.cy) - self.radius
        dz = np.abs(pts[:, 2] - self.height / 2) - self.height / 2
        q = np.stack([dr, dz], axis=1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Ground:
    """z = 0 plane over the world footprint."""

    half_extent: float

    def area(self) -> float:
        return (2.0 * self.half_extent) ** 2

    def sample(self, u: np.ndarray) -> np.ndarray:
        e = self.half_extent
        return np.stack(
            [(u[:, 0] * 2 - 1) * e, (u[:, 1] * 2 - 1) * e, np.zeros(len(u))], axis=1
        )

    def surface_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts[:, 2])


@dataclass
class World:
    landmarks: list
    bounds: np.ndarray  # (2, 3) min/max corners
    seed: int
    include_ground: bool = True

    def surfaces(self) -> list:
        if self.include_ground:
            return [Ground(float(self.bounds[1, 0]))] + self.landmarks
        return list(self.landmarks)

    def surface_distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest sampled surface."""
        dists = np.stack([s.surface_distance(pts) for s in self.surfaces()], axis=0)
        return dists.min(axis=0)


@dataclass
class Trajectory:
    poses: list[Pose]
    spacing: float


def generate_world(
    seed: int, extent: float, n_landmarks: int, include_ground: bool = True
) -> World:
    """Seeded world of boxes, walls (thin boxes) and pillars, centered at
    the origin so regression targets are zero-mean."""
    if extent <= 0 or n_landmarks < 1:
        raise ValueError("extent must be > 0 and n_landmarks >= 1")
    stream = rng.Stream(rng.derive(seed, 101))
    half = extent / 2.0
    margin = 1.0
    landmarks = []
    for _ in range(n_landmarks):
        kind = stream.below(3)
        cx = stream.uniform(-half + margin, half - margin)
        cy = stream.uniform(-half + margin, half - margin)
        room = min(half - abs(cx), half - abs(cy)) - 0.01
        if kind == 0:  # box
            lx = stream.uniform(2.0, 6.0)
            ly = stream.uniform(2.0, 6.0)
            h = stream.uniform(2.0, 10.0)
            yaw = stream.uniform(0.0, 2 * np.pi)
            diag = np.hypot(lx / 2, ly / 2)
            if diag > room:
                lx *= room / diag
                ly *= room / diag
            landmarks.append(Box(cx, cy, yaw, lx, ly, h))
        elif kind == 1:  # wall
            lx = stream.uniform(4.0, 12.0)
            h = stream.uniform(2.0, 5.0)
            yaw = stream.uniform(0.0, 2 * np.pi)
            diag = np.hypot(lx / 2, 0.15)
            if diag > room:
                lx = max(2 * np.sqrt(max(room**2 - 0.15**2, 0.25)), 1.0)
            landmarks.append(Box(cx, cy, yaw, lx, 0.3, h))
        else:  # pillar
            r = min(stream.uniform(0.3, 1.0), room)
            h = stream.uniform(3.0, 8.0)
            landmarks.append(Pillar(cx, cy, r, h))
    bounds = np.array([[-half, -half, 0.0], [half, half, 14.0]])
    return World(landmarks, bounds, seed, include_ground)


def generate_trajectory(
    world: World, n_poses: int, spacing: float, seed: int
) -> Trajectory:
    """Smooth random walk with heading tangent to motion.

    Step lengths jitter within +-15% of `spacing` (inside the +-20%
    contract); near the world border the heading is steered back toward the
    center without changing the step length.
    """
    if n_poses < 1:
        raise ValueError("n_poses must be >= 1")
    stream = rng.Stream(rng.derive(seed, 202))
    half = float(world.bounds[1, 0])
    margin = min(2.0, half / 4)
    pos = np.array(
        [
            stream.uniform(-half + margin, half - margin),
            stream.uniform(-half + margin, half - margin),
        ]
    )
    heading = stream.uniform(0.0, 2 * np.pi)
    poses = [Pose(np.array([pos[0], pos[1], SENSOR_HEIGHT]), Quaternion.from_yaw(heading))]
    for _ in range(n_poses - 1):
        heading += stream.uniform(-0.35, 0.35)
        step = spacing * (1.0 + stream.uniform(-0.15, 0.15))
        nxt = pos + step * np.array([np.cos(heading), np.sin(heading)])
        if np.any(np.abs(nxt) > half - margin):
            heading = float(np.arctan2(-pos[1], -pos[0])) + stream.uniform(-0.3, 0.3)
            nxt = pos + step * np.array([np.cos(heading), np.sin(heading)])
        pos = nxt
        poses.append(Pose(np.array([pos[0], pos[1], SENSOR_HEIGHT]), Quaternion.from_yaw(heading)))
    return Trajectory(poses, spacing)


def perturbed_retraversal(
    train: Trajectory, n_poses: int, seed: int, offset: float = 0.5, yaw_jitter_deg: float = 5.0
) -> list[Pose]:
    """Test split: evenly spaced training poses with small pose noise."""
    stream = rng.Stream(rng.derive(seed, 303))
    idx = np.linspace(0, len(train.poses) - 1, n_poses).round().astype(int)
    out = []
    for i in idx:
        base = train.poses[i]
        dx = stream.uniform(-offset, offset)
        dy = stream.uniform(-offset, offset)
        dyaw = np.radians(stream.uniform(-yaw_jitter_deg, yaw_jitter_deg))
        q = base.q.multiply(Quaternion.from_yaw(dyaw))
        out.append(Pose(base.t + np.array([dx, dy, 0.0]), q))
    return out


def simulate_scan(
    world: World, pose: Pose, cfg: SensorCfg = SensorCfg(), scan_seed: int = 0
) -> PointCloud:
    """Surface-sample the world, keep points within range, map to the
    sensor frame.

    The candidate pool and per-candidate noise depend only on
    (world.seed, scan_seed), not on the pose, so two scans of the same world
    share identical world-frame surface points where their ranges overlap.
    """
    surfaces = world.surfaces()
    areas = np.array([s.area() for s in surfaces])
    total = areas.sum()
    if total <= 0:
        raise EmptyScan("world has no surfaces")
    # largest-remainder allocation keeps the pool size exactly cfg.points
    raw = cfg.points * areas / total
    alloc = np.floor(raw).astype(int)
    rem = cfg.points - alloc.sum()
    order = np.argsort(-(raw - alloc), kind="stable")
    alloc[order[:rem]] += 1

    base = rng.derive(world.seed, scan_seed)
    pools = []
    for i, (surf, k) in enumerate(zip(surfaces, alloc)):
        if k == 0:
            continue
        u = rng.Stream(rng.derive(base, i)).uniform(shape=(k, 3))
        pools.append(surf.sample(u))
    candidates = np.concatenate(pools, axis=0)
    if cfg.noise > 0:
        noise = rng.Stream(rng.derive(base, 9999)).normal((len(candidates), 3))
        candidates = candidates + cfg.noise * noise

    d = np.linalg.norm(candidates - pose.t, axis=1)
    kept = candidates[d <= cfg.max_range]
    if kept.shape[0] == 0:
        raise EmptyScan(f"no surface within {cfg.max_range} m of pose")
    return PointCloud(pose.inverse().apply(kept))


# ---------------------------------------------------------------------------
# Dataset on disk: manifest + FMPC scans + pose text files


@dataclass
class DatasetSpec:
    seed: int = 7
    extent: float = 50.0
    n_landmarks: int = 40
    train_poses: int = 2000
    test_poses: int = 200
    spacing: float = 1.0
    sensor: SensorCfg = field(default_factory=SensorCfg)


def scan_seed_for(split: str, index: int) -> int:
    return rng.derive(0x5CA9, 1 if split == "train" else 2, index)


def generate_dataset(out_dir, spec: DatasetSpec) -> Path:
    """Write manifest, train/test scans and ground-truth pose files."""
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    world = generate_world(spec.seed, spec.extent, spec.n_landmarks)
    train_seed = rng.derive(spec.seed, 11)
    test_seed = rng.derive(spec.seed, 12)
    traj = generate_trajectory(world, spec.train_poses, spec.spacing, train_seed)
    test_poses = perturbed_retraversal(traj, spec.test_poses, test_seed)

    for split, poses in (("train", traj.poses), ("test", test_poses)):
        for i, pose in enumerate(poses):
            cloud = simulate_scan(world, pose, spec.sensor, scan_seed_for(split, i))
            save_scan(out / split / f"scan_{i:06d}.fmpc", cloud)
        save_poses(out / split / "poses.txt", poses)

    manifest = out / "manifest.txt"
    with open(manifest, "w") as f:
        f.write("format_version = 1\n")
        f.write(f"world_seed = {spec.seed}\n")
        f.write(f"extent = {spec.extent:.17g}\n")
        f.write(f"n_landmarks = {spec.n_landmarks}\n")
        f.write(f"spacing = {spec.spacing:.17g}\n")
        f.write(f"sensor_max_range = {spec.sensor.max_range:.17g}\n")
        f.write(f"sensor_noise = {spec.sensor.noise:.17g}\n")
        f.write(f"sensor_points = {spec.sensor.points}\n")
        f.write(f"train_count = {spec.train_poses}\n")
        f.write(f"test_count = {spec.test_poses}\n")
        f.write("train_dir = train\n")
        f.write("test_dir = test\n")
    return manifest


def read_manifest(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def dataset_scans(manifest_path, split: str):
    """Yield (scan_id, cloud, pose); test ids follow after all train ids."""
    manifest = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    n_train = int(manifest["train_count"])
    count = n_train if split == "train" else int(manifest["test_count"])
    base = 0 if split == "train" else n_train
    sub = manifest[f"{split}_dir"]
    poses = load_poses(root / sub / "poses.txt")
    if len(poses) != count:
        raise ValueError(f"{split} pose count {len(poses)} != manifest {count}")
    for i in range(count):
        yield base + i, load_scan(root / sub / f"scan_{i:06d}.fmpc"), poses[i]


def manifest_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
