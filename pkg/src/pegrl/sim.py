"""Quasi-static peg-in-hole simulator.

The end effector is an ideal Cartesian position servo: it chases the
commanded pose with a first-order lag and yields to contact loads through a
finite servo stiffness. Contact is a penalty model against a rectangular hole
cut into a flat surface.

Hole frame: origin at the center of the hole bottom (the insertion goal for
the peg tip), +z pointing out of the hole. The surface plane sits at
z = hole_depth. The peg frame has its origin at the center of the tip face,
the peg body extending along its local +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geom import (
    Pose,
    Twist,
    Wrench,
    _norm,
    pose_error,
    integrate_pose,
    quat_from_axis_angle,
    quat_multiply,
    quat_from_matrix,
)

SUCCESS_RADIUS = 0.001
MAX_START_PENETRATION = 0.001

PLANE_AXES = {
    "-x": (-1.0, 0.0, 0.0), "+x": (1.0, 0.0, 0.0),
    "-y": (0.0, -1.0, 0.0), "+y": (0.0, 1.0, 0.0),
    "-z": (0.0, 0.0, -1.0), "+z": (0.0, 0.0, 1.0),
}


class InvalidStartError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


def hole_orientation(insertion_axis) -> np.ndarray:
    """Quaternion of a hole frame whose +z is opposite to the insertion axis."""
    z = -np.asarray(insertion_axis, dtype=float)
    z = z / np.linalg.norm(z)
    ref = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    if np.allclose(z, [0, 0, 1]):
        return np.array([1.0, 0.0, 0.0, 0.0])
    x = ref - z * (ref @ z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return quat_from_matrix(np.column_stack([x, y, z]))


@dataclass(frozen=True)
class PegHoleScene:
    hole_pose: Pose = field(default_factory=Pose)
    hole_half_width: float = 0.0055
    peg_half_width: float = 0.005
    hole_depth: float = 0.01
    surface_stiffness: float = 1.0e4
    contact_damping: float = 20.0
    friction_mu: float = 0.2
    insertion_axis: tuple = (0.0, 0.0, -1.0)
    peg_length: float = 0.04
    planar: bool = False
    edge_samples: int = 6

    def __post_init__(self):
        if not self.hole_half_width > self.peg_half_width > 0:
            raise ConfigurationError("hole must be wider than the peg")
        if not self.surface_stiffness > 0:
            raise ConfigurationError("surface stiffness must be positive")
        if self.contact_damping < 0:
            raise ConfigurationError("contact damping must be non-negative")
        if not 0 <= self.friction_mu < 2:
            raise ConfigurationError("friction coefficient must lie in [0, 2)")
        if self.hole_depth <= 0 or self.peg_length <= 0:
            raise ConfigurationError("hole depth and peg length must be positive")
        axis = np.asarray(self.insertion_axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ConfigurationError("insertion axis must be a unit vector")
        hole_z = self.hole_pose.rotation[:, 2]
        if not np.allclose(hole_z, -axis, atol=1e-6):
            raise ConfigurationError("hole pose +z must oppose the insertion axis")
        if self.planar and not np.allclose(axis, [0, 0, -1]):
            raise ConfigurationError("planar scenes insert along -z")
        object.__setattr__(self, "insertion_axis", tuple(float(a) for a in axis))
        object.__setattr__(self, "_points", self._sample_points())

    @property
    def clearance(self) -> float:
        """Hole width minus peg width."""
        return 2.0 * (self.hole_half_width - self.peg_half_width)

    @property
    def goal(self) -> Pose:
        return self.hole_pose

    @property
    def lateral_axes(self) -> tuple:
        return (0,) if self.planar else (0, 1)

    def _sample_points(self) -> np.ndarray:
        w = self.peg_half_width
        corners = [(-w, 0.0), (w, 0.0)] if self.planar else [(-w, -w), (w, -w), (-w, w), (w, w)]
        heights = np.linspace(0.0, self.peg_length, self.edge_samples)
        return np.array([(cx, cy, h) for cx, cy in corners for h in heights])

    @property
    def peg_points(self) -> np.ndarray:
        return self._points

    @classmethod
    def with_insertion_axis(cls, axis, position=(0.0, 0.0, 0.0), **kw) -> "PegHoleScene":
        axis = np.asarray(axis, dtype=float)
        return cls(hole_pose=Pose(position, hole_orientation(axis)), insertion_axis=tuple(axis), **kw)


@dataclass(frozen=True)
class SimConfig:
    inner_dt: float = 1.0 / 500.0
    tau_track: float = 0.05
    max_linear_speed: float = 0.1
    max_angular_speed: float = float(np.deg2rad(20.0))
    servo_stiffness: float = 2.0e4
    servo_rot_stiffness: float = 20.0
    slip_velocity: float = 1e-4
    dof_mask: tuple = (1, 1, 1, 1, 1, 1)

    def __post_init__(self):
        if not self.inner_dt > 0:
            raise ConfigurationError("inner_dt must be positive")
        if self.tau_track < self.inner_dt:
            raise ConfigurationError("tracking time constant must be >= inner_dt")
        if self.servo_stiffness <= 0 or self.servo_rot_stiffness <= 0:
            raise ConfigurationError("servo stiffness must be positive")

    @classmethod
    def planar(cls, **kw) -> "SimConfig":
        return cls(dof_mask=(1, 0, 1, 0, 0, 0), **kw)


@dataclass(frozen=True)
class RobotState:
    x: Pose
    twist: Twist = field(default_factory=Twist)
    wrench: Wrench = field(default_factory=Wrench)


# Hole faces as (normal in hole frame). Index order is used by _penetrations.
_FACE_NORMALS = np.array([
    [0.0, 0.0, 1.0],   # surface around the opening
    [0.0, 0.0, 1.0],   # hole bottom
    [-1.0, 0.0, 0.0],  # wall at +x
    [1.0, 0.0, 0.0],   # wall at -x
    [0.0, -1.0, 0.0],  # wall at +y
    [0.0, 1.0, 0.0],   # wall at -y
])


def _penetrations(pts_h: np.ndarray, scene: PegHoleScene):
    """Per-point penetration depth and the face it resolves through.

    Returns (depth, face) with depth 0 / face -1 for points in free space.
    Each penetrating point is assigned to the nearest boundary of free space.
    """
    hw, depth = scene.hole_half_width, scene.hole_depth
    x, y, z = pts_h[:, 0], pts_h[:, 1], pts_h[:, 2]
    if z.min() >= depth:
        # entirely above the surface
        return np.zeros(len(pts_h)), np.full(len(pts_h), -1)
    in_x = np.abs(x) < hw
    in_y = np.ones_like(in_x) if scene.planar else np.abs(y) < hw
    in_col = in_x & in_y
    solid = (z < depth) & ~(in_col & (z >= 0.0))

    cand = np.full((len(pts_h), 6), np.inf)
    cand[:, 0] = np.where(solid & ~in_col, depth - z, np.inf)
    cand[:, 1] = np.where(in_col & (z < 0.0), -z, np.inf)
    cand[:, 2] = np.where(solid & (x >= hw) & in_y, x - hw, np.inf)
    cand[:, 3] = np.where(solid & (x <= -hw) & in_y, -x - hw, np.inf)
    if not scene.planar:
        cand[:, 4] = np.where(solid & (y >= hw) & in_x, y - hw, np.inf)
        cand[:, 5] = np.where(solid & (y <= -hw) & in_x, -y - hw, np.inf)
    face = np.argmin(cand, axis=1)
    pen = cand[np.arange(len(pts_h)), face]
    hit = solid & np.isfinite(pen)
    return np.where(hit, pen, 0.0), np.where(hit, face, -1)


def _peg_in_hole_frame(x: Pose, scene: PegHoleScene):
    r_world = scene.peg_points @ x.rotation.T
    hole_R = scene.hole_pose.rotation
    pts_h = (x.p + r_world - scene.hole_pose.p) @ hole_R
    return r_world, pts_h, hole_R


def max_penetration(x: Pose, scene: PegHoleScene) -> float:
    _, pts_h, _ = _peg_in_hole_frame(x, scene)
    pen, _ = _penetrations(pts_h, scene)
    return float(pen.max()) if len(pen) else 0.0


def contact_wrench(state: RobotState, scene: PegHoleScene, slip_velocity: float = 1e-4) -> Wrench:
    """Penalty contact wrench acting on the peg, moments about the peg tip.

    One spring-damper per penetrated hole face: the face's penetration is the
    deepest point assigned to it and the force acts at the penetration-weighted
    centroid of those points. Friction is Coulomb, regularized to a linear law
    below `slip_velocity`.
    """
    r_world, pts_h, hole_R = _peg_in_hole_frame(state.x, scene)
    pen, face = _penetrations(pts_h, scene)
    force = np.zeros(3)
    moment = np.zeros(3)
    if not np.any(face >= 0):
        return Wrench(force, moment)
    v, w = state.twist.v, state.twist.w
    for f in np.unique(face[face >= 0]):
        sel = face == f
        d = pen[sel]
        delta = d.max()
        if delta <= 0.0:
            continue
        r = (d[:, None] * r_world[sel]).sum(axis=0) / d.sum()
        n = hole_R @ _FACE_NORMALS[f]
        vel = v + np.cross(w, r)
        vn = vel @ n
        fn = max(scene.surface_stiffness * delta - scene.contact_damping * vn, 0.0)
        vt = vel - vn * n
        speed = _norm(vt)
        ft = -scene.friction_mu * fn * vt / max(speed, slip_velocity)
        fc = fn * n + ft
        force += fc
        moment += np.cross(r, fc)
    return Wrench(force, moment)


def reset(scene: PegHoleScene, init: Pose) -> RobotState:
    if max_penetration(init, scene) > MAX_START_PENETRATION:
        raise InvalidStartError("initial pose penetrates the environment by more than 1 mm")
    # the wrench is first sensed after the next servo step
    return RobotState(init)


def _compliance(cfg: SimConfig) -> np.ndarray:
    return np.r_[np.full(3, 1.0 / cfg.servo_stiffness), np.full(3, 1.0 / cfg.servo_rot_stiffness)]


def step_inner(state: RobotState, x_c: Pose, scene: PegHoleScene, cfg: SimConfig) -> RobotState:
    """Advance one servo period toward the commanded pose `x_c`."""
    err = pose_error(state.x, x_c).to_array()
    rate = (err + _compliance(cfg) * state.wrench.to_array()) / cfg.tau_track
    rate = rate * np.asarray(cfg.dof_mask, dtype=float)
    lin = _norm(rate[:3])
    if lin > cfg.max_linear_speed:
        rate[:3] *= cfg.max_linear_speed / lin
    ang = _norm(rate[3:])
    if ang > cfg.max_angular_speed:
        rate[3:] *= cfg.max_angular_speed / ang
    dt = cfg.inner_dt
    x_new = integrate_pose(state.x, Twist.from_array(rate), dt)
    twist = Twist.from_array(pose_error(state.x, x_new).to_array() / dt)
    moved = RobotState(x_new, twist)
    return replace(moved, wrench=contact_wrench(moved, scene, cfg.slip_velocity))


def check_success(state: RobotState, goal: Pose) -> bool:
    return bool(_norm(state.x.p - goal.p) < SUCCESS_RADIUS)


@dataclass(frozen=True)
class RandomizationRanges:
    """Per-episode randomization. Vector ranges are half-widths in the hole
    frame ordered (lateral x, lateral y, axial). `None` keeps the base scene."""

    init_position: tuple = (0.4, 0.4, 0.4)
    init_rotation_deg: float = 10.0
    init_standoff: float = 0.002
    goal_noise_position: tuple = (0.002, 0.002, 0.002)
    goal_noise_rotation_deg: float = 5.0
    goal_bias_position: tuple = (0.0, 0.0, 0.0)
    goal_bias_rotation_deg: tuple = (0.0, 0.0, 0.0)
    force_goal: tuple = (0.0, 10.0)
    stiffness: Optional[tuple] = (1.0e3, 1.0e5)
    insertion_planes: Optional[tuple] = None
    hole_position: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("init_position", "goal_noise_position", "hole_position"):
            vals = getattr(self, name)
            if len(vals) != 3 or any(v < 0 for v in vals):
                raise ConfigurationError(f"{name} must be three non-negative half-widths")
        if self.init_rotation_deg < 0 or self.goal_noise_rotation_deg < 0:
            raise ConfigurationError("rotation ranges must be non-negative")
        lo, hi = self.force_goal
        if not 0 <= lo <= hi:
            raise ConfigurationError("force_goal must satisfy 0 <= low <= high")
        if self.stiffness is not None:
            lo, hi = self.stiffness
            if not 0 < lo <= hi:
                raise ConfigurationError("stiffness must satisfy 0 < low <= high")
        if self.insertion_planes is not None:
            bad = [p for p in self.insertion_planes if p not in PLANE_AXES]
            if bad or not self.insertion_planes:
                raise ConfigurationError(f"unknown insertion planes: {bad}")

    @classmethod
    def fixed(cls, force_goal: float = 5.0, **kw) -> "RandomizationRanges":
        base = dict(init_position=(0.0, 0.0, 0.0), init_rotation_deg=0.0,
                    goal_noise_position=(0.0, 0.0, 0.0), goal_noise_rotation_deg=0.0,
                    force_goal=(force_goal, force_goal), stiffness=None)
        base.update(kw)
        return cls(**base)


def truncated_normal(rng: np.random.Generator, bound, size=None) -> np.ndarray:
    """Zero-mean Gaussian with sigma = bound / 2, resampled outside +-bound."""
    bound = np.broadcast_to(np.asarray(bound, dtype=float), size if size is not None else np.shape(bound))
    out = np.zeros(bound.shape)
    todo = bound > 0
    while np.any(todo):
        draw = rng.normal(0.0, 1.0, size=bound.shape) * bound / 2.0
        ok = todo & (np.abs(draw) <= bound)
        out[ok] = draw[ok]
        todo &= ~ok
    return out


def randomize_scene(rng: np.random.Generator, ranges: RandomizationRanges, base: PegHoleScene):
    """Draw one episode: (scene, initial pose, noisy goal estimate, F_g)."""
    planar = base.planar
    axis = np.asarray(base.insertion_axis)
    if ranges.insertion_planes is not None and not planar:
        axis = np.asarray(PLANE_AXES[ranges.insertion_planes[rng.integers(len(ranges.insertion_planes))]])
    hole_q = hole_orientation(axis) if not np.allclose(axis, base.insertion_axis) else base.hole_pose.q
    hole_p = base.hole_pose.p + rng.uniform(-1.0, 1.0, 3) * np.asarray(ranges.hole_position)
    if planar:
        hole_p[1] = base.hole_pose.p[1]
    stiffness = base.surface_stiffness
    if ranges.stiffness is not None:
        lo, hi = ranges.stiffness
        stiffness = float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if hi > lo else float(lo)
    scene = replace(base, hole_pose=Pose(hole_p, hole_q), insertion_axis=tuple(axis),
                    surface_stiffness=stiffness)
    R = scene.hole_pose.rotation
    lat_mask = np.array([1.0, 0.0 if planar else 1.0, 1.0])
    rot_mask = np.zeros(3) if planar else np.ones(3)

    # initial pose: lateral offsets symmetric, axial offset always above the surface
    half = np.asarray(ranges.init_position, dtype=float)
    off = rng.uniform(-1.0, 1.0, 3) * half
    clear = scene.hole_depth + ranges.init_standoff
    off[2] = rng.uniform(clear, max(clear, half[2]))
    off *= lat_mask
    rot = np.deg2rad(ranges.init_rotation_deg) * rng.uniform(-1.0, 1.0, 3) * rot_mask
    init = Pose(scene.hole_pose.p + R @ off, quat_multiply(quat_from_axis_angle(R @ rot), hole_q))

    noise_p = truncated_normal(rng, np.asarray(ranges.goal_noise_position, dtype=float)) * lat_mask
    noise_p = noise_p + np.asarray(ranges.goal_bias_position, dtype=float) * lat_mask
    noise_r = truncated_normal(rng, np.full(3, np.deg2rad(ranges.goal_noise_rotation_deg))) * rot_mask
    noise_r = noise_r + np.deg2rad(np.asarray(ranges.goal_bias_rotation_deg, dtype=float)) * rot_mask
    noisy = Pose(scene.hole_pose.p + R @ noise_p, quat_multiply(quat_from_axis_angle(R @ noise_r), hole_q))

    lo, hi = ranges.force_goal
    f_goal = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return scene, init, noisy, f_goal


def scene_to_dict(scene: PegHoleScene) -> dict:
    return {
        "hole_position": scene.hole_pose.p.tolist(),
        "hole_half_width": scene.hole_half_width,
        "peg_half_width": scene.peg_half_width,
        "hole_depth": scene.hole_depth,
        "surface_stiffness": scene.surface_stiffness,
        "contact_damping": scene.contact_damping,
        "friction_mu": scene.friction_mu,
        "insertion_axis": list(scene.insertion_axis),
        "peg_length": scene.peg_length,
        "planar": scene.planar,
        "edge_samples": scene.edge_samples,
    }


def scene_from_dict(d: dict) -> PegHoleScene:
    d = dict(d)
    pos = d.pop("hole_position", (0.0, 0.0, 0.0))
    axis = d.pop("insertion_axis", (0.0, 0.0, -1.0))
    return PegHoleScene.with_insertion_axis(axis, position=pos, **d)
