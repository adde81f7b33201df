from dataclasses import replace

import numpy as np
import pytest

from pegrl.control import ParamRanges
from pegrl.env import (
    FG_SLOT,
    PREV_ACTION_SLICE,
    EpisodeConfig,
    EpisodeError,
    InsertionEnv,
    Scenario,
    Status,
    TraceWriter,
    build_observation,
    compute_reward,
    force_score,
    terminal_bonus,
)
from pegrl.geom import Pose, pose_error, quat_from_axis_angle
from pegrl.harness.train import read_csv
from pegrl.nn.nets import ACTION_DIM, FT_CHANNELS, FT_WINDOW
from pegrl.sim import PegHoleScene, RandomizationRanges, RobotState

PLANAR = PegHoleScene(planar=True)


def scripted_insert():
    """Position control across the hole, force control along its axis."""
    a = np.zeros(ACTION_DIM)
    a[12:18] = 1.0
    a[18:24] = 1.0
    a[20] = -1.0
    return a


def desk_env(seed=0, **episode):
    ranges = RandomizationRanges.fixed(force_goal=5.0, init_position=(0.02, 0.0, 0.02))
    return InsertionEnv(PLANAR, ranges, EpisodeConfig(**episode), rng=np.random.default_rng(seed))


def run(env, policy, scenario=None, max_steps=10_000):
    obs = env.reset(scenario)
    out = []
    for _ in range(max_steps):
        res = env.step(policy(obs))
        out.append(res)
        obs = res.obs
        if res.status.done:
            break
    return out


# -- reward ----------------------------------------------------------------------

@pytest.mark.parametrize("status, t, T, kappa", [
    (Status.SUCCESS, 0, 300, 200.0), (Status.SUCCESS, 30, 300, 190.0), (Status.SUCCESS, 300, 300, 100.0),
    (Status.COLLISION, 12, 300, -50.0), (Status.RUNNING, 12, 300, 0.0), (Status.TIMEOUT, 300, 300, 0.0),
])
def test_terminal_bonus(status, t, T, kappa):
    assert terminal_bonus(status, t, T) == kappa


def test_reward_examples():
    fg = np.array([0, 0, -5.0, 0, 0, 0])
    assert abs(compute_reward(fg, fg, 30.0, Status.RUNNING, 3, 300) - 1.0) < 1e-3
    assert compute_reward(fg, fg, 30.0, Status.RUNNING, 3, 300) == force_score(np.zeros(6))
    r = compute_reward(fg, fg, 30.0, Status.COLLISION, 3, 300, w1=0.5, w2=2.0)
    assert r == 0.5 * 1.0 + 2.0 * -50.0
    assert compute_reward(fg, fg, 30.0, Status.SUCCESS, 300, 300, w1=0.0) == 100.0
    assert force_score(np.array([1.0, 0, 0])) == 0.0
    assert force_score(np.array([3.0, 0, 0])) == 0.0
    with pytest.raises(ValueError):
        compute_reward(fg, fg, 0.0, Status.RUNNING, 0, 300)


def test_zero_action_in_free_space_reward():
    ranges = RandomizationRanges.fixed(force_goal=5.0, init_standoff=0.2)
    env = InsertionEnv(PLANAR, ranges, rng=np.random.default_rng(0))
    env.reset()
    res = env.step(np.zeros(ACTION_DIM))
    assert res.status is Status.RUNNING
    np.testing.assert_array_equal(res.info["wrench"], 0)
    expect = force_score((0 - env.f_goal_vec) / 30.0)
    assert res.reward == expect


def test_driving_into_surface_collides():
    ranges = RandomizationRanges.fixed(force_goal=5.0, init_position=(0.03, 0.0, 0.0))
    env = InsertionEnv(PLANAR, ranges, rng=np.random.default_rng(0))
    a = np.zeros(ACTION_DIM)
    a[2] = -1.0
    a[18:24] = 1.0
    out = run(env, lambda o: a)
    last = out[-1]
    assert last.status is Status.COLLISION
    assert last.info["peak_force"] > 30.0
    fs = force_score((last.info["wrench"] - env.f_goal_vec) / 30.0)
    assert last.reward == fs - 50.0


def test_success_bonus_at_step_thirty():
    env = desk_env()
    scenario = env.draw_scenario()
    steps = len(run(env, lambda o: scripted_insert(), scenario))
    assert env.status is Status.SUCCESS
    # a horizon ten times the success step makes the bonus 100 + 0.9 * 100
    env = desk_env(max_steps=10 * steps)
    out = run(env, lambda o: scripted_insert(), scenario)
    last = out[-1]
    assert last.status is Status.SUCCESS and len(out) == steps
    fs = force_score((last.info["wrench"] - env.f_goal_vec) / 30.0)
    assert last.reward - fs == 190.0
    assert compute_reward(env.f_goal_vec, env.f_goal_vec, 30.0, Status.SUCCESS, 30, 300) - 1.0 == 190.0


# -- observation -----------------------------------------------------------------

def test_observation_at_goal():
    goal = Pose([0.1, 0.2, 0.3])
    obs = build_observation(RobotState(goal), goal, 4.0, np.zeros(ACTION_DIM),
                            np.zeros((FT_WINDOW, FT_CHANNELS)), 30.0)
    expect = np.zeros(37)
    expect[FG_SLOT] = 0.4
    np.testing.assert_array_equal(obs.proprio, expect)
    np.testing.assert_array_equal(obs.ft, 0)


def test_observation_scales_and_window_order():
    goal = Pose([0.001, 0, 0])
    window = np.zeros((FT_WINDOW, FT_CHANNELS))
    window[-1] = [3.0, 0, 0, 0, 0, 0]
    a_prev = np.linspace(-1, 1, ACTION_DIM)
    obs = build_observation(RobotState(Pose()), goal, 0.0, a_prev, window, 30.0)
    assert abs(obs.proprio[0] - 0.02) < 1e-15
    assert obs.ft[11, 0] == 0.1 and np.all(obs.ft[:11] == 0)
    np.testing.assert_array_equal(obs.proprio[PREV_ACTION_SLICE], a_prev)


def test_env_window_pushes_newest_last():
    env = desk_env()
    env.reset()
    a = scripted_insert()
    results = [env.step(a) for _ in range(3)]
    for k, res in enumerate(results):
        np.testing.assert_array_equal(res.obs.ft[-1], res.info["wrench"] / 30.0)
        if k:
            np.testing.assert_array_equal(res.obs.ft[-2], results[k - 1].info["wrench"] / 30.0)
    np.testing.assert_array_equal(results[-1].obs.proprio[PREV_ACTION_SLICE], a)


def test_reset_examples():
    env = InsertionEnv(PLANAR, RandomizationRanges.fixed(force_goal=5.0), rng=np.random.default_rng(0))
    o1 = env.reset()
    o2 = env.reset()
    np.testing.assert_array_equal(o1.proprio, o2.proprio)
    assert o1.proprio[FG_SLOT] == 0.5
    np.testing.assert_array_equal(o1.ft, 0)
    np.testing.assert_array_equal(o1.proprio[PREV_ACTION_SLICE], 0)


def test_default_resets_hide_goal_within_bounds():
    env = InsertionEnv(PegHoleScene(), RandomizationRanges(), rng=np.random.default_rng(2))
    for _ in range(1000):
        obs = env.reset()
        s = env.scenario
        assert 0 <= obs.proprio[FG_SLOT] * 10 <= 10
        e = pose_error(s.scene.goal, s.noisy_goal)
        assert np.all(np.abs(s.scene.hole_pose.rotation.T @ e.dp) <= 0.002 + 1e-12)
        assert np.linalg.norm(np.rad2deg(e.dtheta)) <= 5 * np.sqrt(3) + 1e-9


def _wander(obs):
    """Observation-driven motion that stays in free space above the hole."""
    a = np.zeros(ACTION_DIM)
    a[0] = np.sin(obs.proprio[13] + 1.0)
    a[2] = 0.6 + 0.3 * np.cos(3 * obs.proprio[0])
    a[12:18] = -1.0
    a[18:24] = -1.0
    return a


def test_true_goal_never_observed():
    ranges = RandomizationRanges.fixed(force_goal=5.0, init_standoff=0.05)
    env = InsertionEnv(PLANAR, ranges, EpisodeConfig(max_steps=100), rng=np.random.default_rng(0))
    base = env.draw_scenario()
    moved = replace(base.scene, hole_pose=Pose(base.scene.hole_pose.p + [0.0015, 0, -0.0005]))
    a = run(env, _wander, base)
    b = run(env, _wander, Scenario(moved, base.init, base.noisy_goal, base.f_goal))
    assert len(a) == len(b) == 100
    for ra, rb in zip(a, b):
        assert ra.obs.proprio.tobytes() == rb.obs.proprio.tobytes()
        assert ra.obs.ft.tobytes() == rb.obs.ft.tobytes()
    assert a[-1].info["distance"] != b[-1].info["distance"]


def test_collision_flag_is_function_of_wrench(rng):
    env = InsertionEnv(PLANAR, RandomizationRanges.fixed(force_goal=5.0, init_position=(0.02, 0, 0.01)),
                       EpisodeConfig(max_steps=40), rng=np.random.default_rng(3))
    for _ in range(8):
        for res in run(env, lambda o: rng.uniform(-1, 1, ACTION_DIM)):
            assert (res.status is Status.COLLISION) == (res.info["peak_force"] > 30.0)
            assert -50.0 <= res.reward <= 1.0 + 200.0


def test_episode_determinism():
    trajs = []
    for _ in range(2):
        env = desk_env(seed=5)
        g = np.random.default_rng(9)
        trajs.append([(r.obs.proprio.copy(), r.reward) for r in run(env, lambda o: g.uniform(-1, 1, ACTION_DIM))])
    assert len(trajs[0]) == len(trajs[1])
    for (p0, r0), (p1, r1) in zip(*trajs):
        assert p0.tobytes() == p1.tobytes() and r0 == r1


def test_step_errors():
    env = desk_env()
    env.reset()
    with pytest.raises(ValueError):
        env.step(np.full(ACTION_DIM, np.nan))
    with pytest.raises(ValueError):
        env.step(np.zeros(3))
    run(env, lambda o: scripted_insert())
    with pytest.raises(EpisodeError):
        env.step(np.zeros(ACTION_DIM))


def test_timeout_status():
    env = desk_env(max_steps=2)
    ranges = RandomizationRanges.fixed(force_goal=5.0, init_standoff=0.2)
    env.ranges = ranges
    out = run(env, lambda o: np.zeros(ACTION_DIM))
    assert [r.status for r in out] == [Status.RUNNING, Status.TIMEOUT]
    assert not Status.TIMEOUT.terminal and Status.SUCCESS.terminal and Status.COLLISION.terminal


def test_residual_mode_runs_and_uses_base_gains():
    env = desk_env(residual=True)
    env.reset()
    res = env.step(np.zeros(ACTION_DIM))
    assert np.isfinite(res.reward)
    env2 = desk_env(residual=False)
    env2.reset()
    res2 = env2.step(np.zeros(ACTION_DIM))
    # zero policy action means base parameters in both modes
    np.testing.assert_allclose(res.obs.proprio, res2.obs.proprio, atol=1e-12)


def test_full_3d_scene_runs():
    ranges = RandomizationRanges(init_position=(0.01, 0.01, 0.02), init_rotation_deg=2.0, force_goal=(1, 8),
                                 insertion_planes=("-z", "+x"))
    env = InsertionEnv(PegHoleScene(), ranges, EpisodeConfig(max_steps=20), rng=np.random.default_rng(0))
    out = run(env, lambda o: scripted_insert())
    assert all(np.all(np.isfinite(r.obs.proprio)) for r in out)


def test_trace_writer(tmp_path):
    env = desk_env()
    env.reset()
    path = tmp_path / "trace.csv"
    with TraceWriter(path) as w:
        a = scripted_insert()
        res = env.step(a)
        w.write(env, a, res)
    schema, header, rows = read_csv(path)
    assert schema == "pegrl-trace/1"
    assert header[:4] == ["t", "rel_x", "rel_y", "rel_z"] and header[-2:] == ["reward", "done"]
    assert len(rows) == 1 and len(rows[0]) == 10 + ACTION_DIM + 2


def test_episode_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(max_steps=0)
    env = desk_env(f_max=3.0)
    with pytest.raises(ValueError):
        env.reset()
