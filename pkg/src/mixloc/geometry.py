"""SE(3) poses, quaternion algebra and pose-error metrics.

Quaternions are stored (w, x, y, z), unit norm, with the sign canonicalized
to w >= 0 so every rotation has exactly one representative and the
log-quaternion regression target is single-valued. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def normalized(w: float, x: float, y: float, z: float) -> "Quaternion":
        """Unit quaternion with canonical sign from arbitrary components."""
        n = np.sqrt(w * w + x * x + y * y + z * z)
        if n < 1e-12:
            raise ValueError("cannot normalize a near-zero quaternion")
        w, x, y, z = w / n, x / n, y / n, z / n
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        return Quaternion(float(w), float(x), float(y), float(z))

    @staticmethod
    def from_yaw(yaw: float) -> "Quaternion":
        return Quaternion.normalized(np.cos(yaw / 2.0), 0.0, 0.0, np.sin(yaw / 2.0))

    def norm(self) -> float:
        return float(np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2))

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def multiply(self, o: "Quaternion") -> "Quaternion":
        """Hamilton product, renormalized and canonicalized."""
        w = self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z
        x = self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y
        y = self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x
        z = self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w
        return Quaternion.normalized(w, x, y, z)

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )

    def rotate(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.rotation_matrix().T

    def dot(self, o: "Quaternion") -> float:
        return self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)


def quat_log(q: Quaternion) -> np.ndarray:
    """Log map of a unit quaternion (w >= 0) as a 3-vector u*theta.

    theta = atan2(|xyz|, w) is the quaternion half-angle, so the output norm
    is at most pi/2 on the canonical hemisphere and the map has no
    singularity at the identity (below r = 1e-9 the linearization v = xyz is
    exact to machine precision).
    """
    v = np.array([q.x, q.y, q.z], dtype=np.float64)
    r = float(np.linalg.norm(v))
    if r < 1e-9:
        return v.copy()
    theta = float(np.arctan2(r, q.w))
    return v * (theta / r)


def quat_exp(v: np.ndarray) -> Quaternion:
    """Inverse of quat_log: (cos|v|, v/|v| * sin|v|), canonicalized."""
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta >= np.pi:
        raise ValueError(f"log-quaternion norm {theta} out of range [0, pi)")
    if theta < 1e-9:
        return Quaternion.normalized(1.0, *v)
    s = np.sin(theta) / theta
    return Quaternion.normalized(np.cos(theta), v[0] * s, v[1] * s, v[2] * s)


def orientation_error_deg(q1: Quaternion, q2: Quaternion) -> float:
    """Geodesic angle between two rotations, in degrees, in [0, 180]."""
    d = min(abs(q1.dot(q2)), 1.0)
    return float(np.degrees(2.0 * np.arccos(d)))


@dataclass
class Pose:
    """Rigid transform mapping sensor-frame coordinates to the scene frame."""

    t: np.ndarray
    q: Quaternion = field(default_factory=Quaternion.identity)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), Quaternion.identity())

    def compose(self, o: "Pose") -> "Pose":
        return Pose(self.q.rotate(o.t.reshape(1, 3))[0] + self.t, self.q.multiply(o.q))

    def inverse(self) -> "Pose":
        qi = self.q.conjugate()
        return Pose(-qi.rotate(self.t.reshape(1, 3))[0], qi)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return self.q.rotate(pts) + self.t

    def log_q(self) -> np.ndarray:
        return quat_log(self.q)


def transform_points(pose: Pose, pts: np.ndarray) -> np.ndarray:
    """Apply p' = R(q) p + t to an (N, 3) array."""
    return pose.apply(pts)


def translation_error_m(p1: Pose, p2: Pose) -> float:
    return float(np.linalg.norm(p1.t - p2.t))


def save_poses(path, poses) -> None:
    """One pose per line: tx ty tz qw qx qy qz (round-trip-exact decimals)."""
    with open(path, "w") as f:
        for p in poses:
            vals = [*p.t, p.q.w, p.q.x, p.q.y, p.q.z]
            f.write(" ".join(f"{v:.17g}" for v in vals) + "\n")


def load_poses(path) -> list[Pose]:
    poses = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            v = [float(x) for x in line.split()]
            if len(v) != 7:
                raise ValueError(f"pose line needs 7 fields, got {len(v)}: {line!r}")
            poses.append(Pose(np.array(v[:3]), Quaternion.normalized(*v[3:])))
    return poses
