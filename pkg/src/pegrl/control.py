"""Adaptive parallel position-force controller.

The controller output is a 6-dim task-space increment (translation, world
rotation vector) that is applied to the current pose to form the command
handed to the position servo. Gains are per-servo-step: the servo closes
roughly ``inner_dt / tau_track`` of a commanded increment per period.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Pose, _norm, displace

ACTION_TOL = 1e-6
KI_RATIO = 0.01


class InvalidActionError(ValueError):
    pass


def _vec6(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape == ():
        a = np.full(6, float(a))
    if a.shape != (6,):
        raise ValueError(f"expected a 6-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class ControllerParams:
    kp_x: np.ndarray
    kp_f: np.ndarray
    selection: np.ndarray
    kd_x: np.ndarray = field(init=False)
    ki_f: np.ndarray = field(init=False)

    def __post_init__(self):
        kp_x, kp_f, s = _vec6(self.kp_x), _vec6(self.kp_f), _vec6(self.selection)
        if np.any(kp_x < 0) or np.any(kp_f < 0):
            raise ValueError("gains must be non-negative")
        if np.any(s < 0) or np.any(s > 1):
            raise ValueError("selection entries must lie in [0, 1]")
        object.__setattr__(self, "kp_x", kp_x)
        object.__setattr__(self, "kp_f", kp_f)
        object.__setattr__(self, "selection", s)
        # critically damped PD, integral gain tied to the proportional force gain
        object.__setattr__(self, "kd_x", 2.0 * np.sqrt(kp_x))
        object.__setattr__(self, "ki_f", KI_RATIO * kp_f)


@dataclass(frozen=True)
class ParamRanges:
    """Base value and half-range for each of the 18 controllable parameters."""

    kp_x_base: tuple = (15.0, 15.0, 15.0, 15.0, 15.0, 15.0)
    kp_x_range: tuple = (10.0, 10.0, 10.0, 10.0, 10.0, 10.0)
    kp_f_base: tuple = (1.0e-4, 1.0e-4, 1.0e-4, 1.0e-2, 1.0e-2, 1.0e-2)
    kp_f_range: tuple = (9.0e-5, 9.0e-5, 9.0e-5, 9.0e-3, 9.0e-3, 9.0e-3)
    s_base: tuple = (0.5, 0.5, 0.5, 0.5, 0.5, 0.5)
    s_range: tuple = (0.5, 0.5, 0.5, 0.5, 0.5, 0.5)

    def __post_init__(self):
        for name in ("kp_x_base", "kp_x_range", "kp_f_base", "kp_f_range", "s_base", "s_range"):
            object.__setattr__(self, name, tuple(float(v) for v in _vec6(getattr(self, name))))
        for base, rng in ((self.kp_x_base, self.kp_x_range), (self.kp_f_base, self.kp_f_range)):
            b, r = np.asarray(base), np.asarray(rng)
            if np.any(r < 0) or np.any(b - r < 0):
                raise ValueError("gain ranges must keep every gain non-negative")
        if np.any(np.asarray(self.s_range) < 0):
            raise ValueError("selection range must be non-negative")

    def base_params(self) -> ControllerParams:
        return map_action_to_params(np.zeros(18), self)


def map_action_to_params(a_p, ranges: ParamRanges) -> ControllerParams:
    """Affine map of an 18-dim action in [-1, 1] onto [base - range, base + range]."""
    a = np.asarray(a_p, dtype=float)
    if a.shape != (18,):
        raise InvalidActionError(f"expected 18 controller actions, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0 + ACTION_TOL):
        raise InvalidActionError(f"controller action outside [-1, 1]: {a}")
    a = np.clip(a, -1.0, 1.0)
    kp_x = np.asarray(ranges.kp_x_base) + a[0:6] * np.asarray(ranges.kp_x_range)
    kp_f = np.asarray(ranges.kp_f_base) + a[6:12] * np.asarray(ranges.kp_f_range)
    s = np.asarray(ranges.s_base) + a[12:18] * np.asarray(ranges.s_range)
    return ControllerParams(np.maximum(kp_x, 0.0), np.maximum(kp_f, 0.0), np.clip(s, 0.0, 1.0))


@dataclass
class ControllerState:
    force_integral: np.ndarray = field(default_factory=lambda: np.zeros(6))
    last_error: np.ndarray = field(default_factory=lambda: np.zeros(6))
    windup_limit: float = 10.0

    def reset(self):
        self.force_integral = np.zeros(6)
        self.last_error = np.zeros(6)


def control_terms(x_e, xd_e, f_e, params: ControllerParams, integral) -> tuple:
    """Unblended branch outputs (position PD, force PI)."""
    pos = params.kp_x * x_e + params.kd_x * xd_e
    force = params.kp_f * f_e + params.ki_f * integral
    return pos, force


def parallel_control(x_e, xd_e, f_e, params: ControllerParams, a_x, state: ControllerState, dt: float):
    """One controller period.

    Returns the task-space increment
    ``S*(Kp_x*x_e + Kd_x*xd_e) + a_x + (1-S)*(Kp_f*F_e + Ki_f*int F_e dt)``
    and the updated controller state (the input state is not modified).
    ``f_e`` is the force error F_g - F_ext.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x_e, xd_e, f_e, a_x = (np.asarray(v, dtype=float) for v in (x_e, xd_e, f_e, a_x))
    for v in (x_e, xd_e, f_e, a_x):
        if v.shape != (6,) or not np.all(np.isfinite(v)):
            raise ValueError(f"controller inputs must be finite 6-vectors, got {v}")
    lim = state.windup_limit
    # forward Euler: this period uses the integral accumulated so far
    pos, force = control_terms(x_e, xd_e, f_e, params, state.force_integral)
    s = params.selection
    out = s * pos + a_x + (1.0 - s) * force
    integral = np.clip(state.force_integral + f_e * dt, -lim, lim)
    return out, ControllerState(integral, x_e.copy(), lim)


def residual_command(x_ref_pd, x_f, a_x) -> np.ndarray:
    """Residual composition: hand-designed reference term + force response + policy."""
    return np.asarray(x_ref_pd, dtype=float) + np.asarray(x_f, dtype=float) + np.asarray(a_x, dtype=float)


@dataclass(frozen=True)
class CommandLimits:
    max_translation: float = 0.005
    max_rotation: float = np.deg2rad(1.0)


def clamp_increment(delta, limits: CommandLimits) -> np.ndarray:
    delta = np.asarray(delta, dtype=float).copy()
    t = _norm(delta[:3])
    if t > limits.max_translation:
        delta[:3] *= limits.max_translation / t
    r = _norm(delta[3:])
    if r > limits.max_rotation:
        delta[3:] *= limits.max_rotation / r
    return delta


def apply_command(x: Pose, x_c_delta, limits: CommandLimits = CommandLimits()) -> Pose:
    return displace(x, clamp_increment(x_c_delta, limits))
