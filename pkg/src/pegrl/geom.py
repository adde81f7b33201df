"""Task-space rigid-body math.

Quaternions are stored as numpy arrays in (w, x, y, z) order and are kept
canonical with a non-negative scalar part. Orientation errors are axis-angle
3-vectors so that pose errors, twists and wrenches all live in the same
6-dimensional task space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


def _finite(*arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise ValueError(f"non-finite input: {a!r}")


def _norm(v) -> float:
    return math.sqrt(float(np.dot(v, v)))


def quat_canonical(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = _norm(q)
    # NaN and inf both fail this comparison
    if not _EPS <= n < math.inf:
        raise ValueError(f"invalid quaternion: {q!r}")
    q = q / n
    # sign of the first nonzero component decides; eta >= 0 in all but the 180 degree case
    lead = q[np.flatnonzero(q)[0]]
    return -q if lead < 0 else q


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b, canonicalized (rotation b applied first)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    out = np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])
    return quat_canonical(out)


def quat_from_axis_angle(rotvec) -> np.ndarray:
    """Exponential map from a rotation vector (axis * angle) to a unit quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = _norm(rotvec)
    if not math.isfinite(angle):
        raise ValueError(f"non-finite rotation vector: {rotvec!r}")
    if angle < 1e-12:
        # second-order expansion keeps the map smooth at zero
        q = np.concatenate([[1.0 - angle * angle / 8.0], 0.5 * rotvec])
    else:
        q = np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) / angle * rotvec])
    return quat_canonical(q)


def quat_to_axis_angle(q) -> np.ndarray:
    """Log map. Returns the shortest-arc rotation vector, norm in [0, pi]."""
    q = quat_canonical(q)
    w = min(q[0], 1.0)
    s = _norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(s, w)
    return q[1:] / s * angle


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_canonical(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(q)


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class Pose:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(3)
        _finite(p)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", quat_canonical(np.asarray(self.q, dtype=float).reshape(4)))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.p, other.p) and np.array_equal(self.q, other.q)

    __hash__ = None


@dataclass(frozen=True)
class Twist:
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        v = np.array(self.v, dtype=float).reshape(3)
        w = np.array(self.w, dtype=float).reshape(3)
        _finite(v, w)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.v, self.w])

    @classmethod
    def from_array(cls, a) -> "Twist":
        a = np.asarray(a, dtype=float)
        return cls(a[:3], a[3:6])


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        f = np.array(self.force, dtype=float).reshape(3)
        m = np.array(self.moment, dtype=float).reshape(3)
        _finite(f, m)
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "moment", m)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])

    @classmethod
    def from_array(cls, a) -> "Wrench":
        a = np.asarray(a, dtype=float)
        return cls(a[:3], a[3:6])


@dataclass(frozen=True)
class PoseError:
    dp: np.ndarray
    dtheta: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.dp, self.dtheta])


def pose_error(current: Pose, target: Pose) -> PoseError:
    """Error that takes `current` to `target`: translation difference and the
    shortest-arc rotation vector of target.q * current.q^-1 (world frame)."""
    dp = target.p - current.p
    dq = quat_multiply(target.q, quat_conjugate(current.q))
    return PoseError(dp, quat_to_axis_angle(dq))


def integrate_pose(x: Pose, twist: Twist, dt: float) -> Pose:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    p = x.p + twist.v * dt
    q = quat_multiply(quat_from_axis_angle(twist.w * dt), x.q)
    return Pose(p, q)


def displace(x: Pose, delta) -> Pose:
    """Apply a 6-vector increment (translation, world-frame rotation vector)."""
    delta = np.asarray(delta, dtype=float)
    return Pose(x.p + delta[:3], quat_multiply(quat_from_axis_angle(delta[3:6]), x.q))
