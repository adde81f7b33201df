"""20 Hz insertion environment around the controller and the contact simulator."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import sim
from .control import (
    CommandLimits,
    ControllerState,
    ParamRanges,
    apply_command,
    control_terms,
    map_action_to_params,
    parallel_control,
    residual_command,
)
from .geom import Pose, pose_error
from .nn.nets import ACTION_DIM, FT_CHANNELS, FT_WINDOW, PROPRIO_DIM

POS_SCALE = 0.05
ANGLE_SCALE = 0.17
VEL_SCALE = 0.1
FORCE_GOAL_SCALE = 10.0
FG_SLOT = 12
PREV_ACTION_SLICE = slice(13, 37)


class Status(str, enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        """Ends the episode without bootstrapping."""
        return self in (Status.SUCCESS, Status.COLLISION)

    @property
    def done(self) -> bool:
        return self is not Status.RUNNING


class EpisodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 300
    f_max: float = 30.0
    w1: float = 1.0
    w2: float = 1.0
    w_dist: float = 0.0
    dist_scale: float = 0.05
    inner_steps: int = 25
    filter_cutoff_hz: float = 50.0
    alpha_n: float = 1e-6
    residual: bool = False

    def __post_init__(self):
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if self.f_max <= 0:
            raise ValueError("f_max must be positive")
        if self.inner_steps <= 0:
            raise ValueError("inner_steps must be positive")


@dataclass
class Observation:
    proprio: np.ndarray
    ft: np.ndarray


@dataclass
class StepResult:
    obs: Observation
    reward: float
    status: Status
    info: dict = field(default_factory=dict)


def l12_norm(e, alpha_n: float = 1e-6) -> float:
    sq = float(np.dot(e, e))
    return 0.5 * sq + np.sqrt(alpha_n + sq)


def force_score(e, alpha_n: float = 1e-6) -> float:
    """Linear map of the smoothed force-error norm: 1 at zero error, 0 at unit norm, clamped."""
    lo = np.sqrt(alpha_n)
    hi = l12_norm(np.array([1.0]), alpha_n)
    return float(np.clip(1.0 - (l12_norm(e, alpha_n) - lo) / (hi - lo), 0.0, 1.0))


def terminal_bonus(status: Status, t: int, T: int) -> float:
    if status is Status.SUCCESS:
        return 100.0 + (1.0 - t / T) * 100.0
    if status is Status.COLLISION:
        return -50.0
    return 0.0


def compute_reward(f_ext, f_goal, f_max: float, status: Status, t: int, T: int, w1: float = 1.0,
                   w2: float = 1.0, alpha_n: float = 1e-6) -> float:
    if not f_max > 0:
        raise ValueError("f_max must be positive")
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    e = (np.asarray(f_ext, dtype=float) - np.asarray(f_goal, dtype=float)) / f_max
    return w1 * force_score(e, alpha_n) + w2 * terminal_bonus(status, t, T)


def build_observation(state: sim.RobotState, noisy_goal: Pose, f_goal: float, a_prev, window, f_max: float,
                      ) -> Observation:
    """Normalized observation. Uses the goal estimate only."""
    err = pose_error(state.x, noisy_goal)
    proprio = np.empty(PROPRIO_DIM)
    proprio[0:3] = err.dp / POS_SCALE
    proprio[3:6] = err.dtheta / ANGLE_SCALE
    proprio[6:12] = state.twist.to_array() / VEL_SCALE
    proprio[FG_SLOT] = f_goal / FORCE_GOAL_SCALE
    proprio[PREV_ACTION_SLICE] = a_prev
    ft = np.asarray(window, dtype=float) / f_max
    return Observation(proprio, ft)


@dataclass
class Scenario:
    """Everything drawn at reset time."""
    scene: sim.PegHoleScene
    init: Pose
    noisy_goal: Pose
    f_goal: float


class InsertionEnv:
    def __init__(self, base_scene: sim.PegHoleScene, ranges: sim.RandomizationRanges,
                 episode: EpisodeConfig = EpisodeConfig(), sim_cfg: Optional[sim.SimConfig] = None,
                 param_ranges: ParamRanges = ParamRanges(), limits: CommandLimits = CommandLimits(),
                 rng: Optional[np.random.Generator] = None):
        self.base_scene, self.ranges, self.episode = base_scene, ranges, episode
        if sim_cfg is None:
            sim_cfg = sim.SimConfig.planar() if base_scene.planar else sim.SimConfig()
        self.sim_cfg, self.param_ranges, self.limits = sim_cfg, param_ranges, limits
        self.rng = rng if rng is not None else np.random.default_rng()
        self.dof = np.asarray(sim_cfg.dof_mask, dtype=float)
        dt = sim_cfg.inner_dt
        rc = 1.0 / (2.0 * np.pi * episode.filter_cutoff_hz)
        self.filter_gain = dt / (dt + rc)
        self.action_scale = np.r_[np.full(3, limits.max_translation), np.full(3, limits.max_rotation)]
        self.scenario: Optional[Scenario] = None
        self.status = Status.TIMEOUT

    # -- episode control ---------------------------------------------------
    def draw_scenario(self, rng=None) -> Scenario:
        rng = rng if rng is not None else self.rng
        scene, init, noisy, f_goal = sim.randomize_scene(rng, self.ranges, self.base_scene)
        return Scenario(scene, init, noisy, f_goal)

    def reset(self, scenario: Optional[Scenario] = None) -> Observation:
        if scenario is None:
            scenario = self.draw_scenario()
        if not self.episode.f_max > scenario.f_goal >= 0:
            raise ValueError("need f_max > F_g >= 0")
        self.scenario = scenario
        self.state = sim.reset(scenario.scene, scenario.init)
        self.ctl = ControllerState()
        self.window = np.zeros((FT_WINDOW, FT_CHANNELS))
        self.filtered = -self.state.wrench.to_array()
        self.a_prev = np.zeros(ACTION_DIM)
        self.t = 0
        self.status = Status.RUNNING
        axis = np.asarray(scenario.scene.insertion_axis)
        self.f_goal_vec = np.r_[scenario.f_goal * axis, np.zeros(3)]
        return self.observe()

    def observe(self) -> Observation:
        s = self.scenario
        return build_observation(self.state, s.noisy_goal, s.f_goal, self.a_prev, self.window, self.episode.f_max)

    @property
    def true_goal(self) -> Pose:
        return self.scenario.scene.goal

    def sensed_wrench(self) -> np.ndarray:
        """Wrench the end effector applies to the environment."""
        return -self.state.wrench.to_array()

    # -- stepping ------------------------------------------------------------
    def step(self, action) -> StepResult:
        if self.status is not Status.RUNNING:
            raise EpisodeError("episode is over; call reset()")
        a = np.asarray(action, dtype=float)
        if a.shape != (ACTION_DIM,) or not np.all(np.isfinite(a)):
            raise ValueError(f"action must be a finite {ACTION_DIM}-vector")
        a = np.clip(a, -1.0, 1.0)
        ep, cfg, s = self.episode, self.sim_cfg, self.scenario
        if ep.residual:
            params = self.param_ranges.base_params()
        else:
            params = map_action_to_params(a[6:], self.param_ranges)
        a_x = a[:6] * self.action_scale * self.dof
        dt = cfg.inner_dt
        acc = np.zeros(6)
        peak = 0.0
        collided = False
        n = 0
        for _ in range(ep.inner_steps):
            x_e = pose_error(self.state.x, s.noisy_goal).to_array() * self.dof
            xd_e = -self.state.twist.to_array() * dt * self.dof
            f_e = (self.f_goal_vec - self.sensed_wrench()) * self.dof
            if ep.residual:
                delta, self.ctl = self._residual_control(x_e, xd_e, f_e, params, a_x, dt)
            else:
                delta, self.ctl = parallel_control(x_e, xd_e, f_e, params, a_x, self.ctl, dt)
            x_c = apply_command(self.state.x, delta * self.dof, self.limits)
            self.state = sim.step_inner(self.state, x_c, s.scene, cfg)
            self.filtered = self.filtered + self.filter_gain * (self.sensed_wrench() - self.filtered)
            acc += self.filtered
            n += 1
            peak = max(peak, float(np.max(np.abs(self.filtered))))
            if peak > ep.f_max:
                collided = True
                break
        agg = acc / n
        self.window = np.vstack([self.window[1:], agg])
        self.a_prev = a.copy()
        self.t += 1
        dist = float(np.linalg.norm(self.state.x.p - self.true_goal.p))
        if collided:
            status = Status.COLLISION
        elif sim.check_success(self.state, self.true_goal):
            status = Status.SUCCESS
        elif self.t >= ep.max_steps:
            status = Status.TIMEOUT
        else:
            status = Status.RUNNING
        self.status = status
        reward = compute_reward(agg, self.f_goal_vec, ep.f_max, status, self.t, ep.max_steps, ep.w1, ep.w2,
                                ep.alpha_n)
        if ep.w_dist:
            reward += ep.w_dist * float(np.clip(1.0 - dist / ep.dist_scale, 0.0, 1.0))
        info = {"distance": dist, "peak_force": peak, "t": self.t, "wrench": agg}
        return StepResult(self.observe(), reward, status, info)

    def _residual_control(self, x_e, xd_e, f_e, params, a_x, dt):
        # parallel controller split into its reference and force-response terms
        pos, force = control_terms(x_e, xd_e, f_e, params, self.ctl.force_integral)
        _, ctl = parallel_control(x_e, xd_e, f_e, params, np.zeros(6), self.ctl, dt)
        s = params.selection
        return residual_command(s * pos, (1.0 - s) * force, a_x), ctl


TRACE_SCHEMA = "pegrl-trace/1"
TRACE_HEADER = (["t", "rel_x", "rel_y", "rel_z", "fx", "fy", "fz", "mx", "my", "mz"]
                + [f"a{i}" for i in range(ACTION_DIM)] + ["reward", "done"])


class TraceWriter:
    """Per-policy-step trace CSV with a schema line before the header."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.fh.write(f"# schema: {TRACE_SCHEMA}\n")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(TRACE_HEADER)

    def write(self, env: InsertionEnv, action, result: StepResult):
        rel = env.state.x.p - env.true_goal.p
        self.writer.writerow([result.info["t"], *rel, *result.info["wrench"], *np.asarray(action),
                              result.reward, result.status.value])

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
