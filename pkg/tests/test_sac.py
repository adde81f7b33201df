import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pegrl.harness.verify import random_batch
from pegrl.nn.nets import ACTION_DIM, FT_CHANNELS, FT_WINDOW, PROPRIO_DIM, NetConfig, PolicyNet, QNet
from pegrl.sac.agent import NonFiniteLossError, SACAgent, SacConfig, critic_targets, polyak_update
from pegrl.sac.replay import BufferNotReady, InvalidTransitionError, PrioritizedReplay, SumTree, Transition

TINY = NetConfig(proprio_hidden=4, feature_dim=4, head_hidden=4, tcn_channels=4, tcn_dilations=(1, 2),
                 dtype="float64")


def transition(rng, reward=0.0, terminal=False, timeout=False):
    return Transition(rng.normal(size=PROPRIO_DIM), rng.normal(size=(FT_WINDOW, FT_CHANNELS)),
                      rng.uniform(-1, 1, ACTION_DIM), reward, rng.normal(size=PROPRIO_DIM),
                      rng.normal(size=(FT_WINDOW, FT_CHANNELS)), terminal, timeout)


# -- replay ------------------------------------------------------------------------

def test_insert_and_evict(rng):
    buf = PrioritizedReplay(4, rng=rng)
    buf.insert(transition(rng, 0.0))
    assert len(buf) == 1
    for k in range(1, 5):
        buf.insert(transition(rng, float(k)))
    assert len(buf) == 4
    assert sorted(buf.reward[:4]) == [1.0, 2.0, 3.0, 4.0]


def test_insert_rejects_bad_input(rng):
    buf = PrioritizedReplay(4, rng=rng)
    with pytest.raises(InvalidTransitionError):
        buf.insert(transition(rng), priority=0.0)
    bad = transition(rng)
    bad.action = np.zeros(5)
    with pytest.raises(InvalidTransitionError):
        buf.insert(bad)
    with pytest.raises(InvalidTransitionError):
        buf.insert(transition(rng, reward=np.nan))


def test_underfull_sample(rng):
    buf = PrioritizedReplay(8, rng=rng)
    buf.insert(transition(rng))
    with pytest.raises(BufferNotReady):
        buf.sample(2)


def test_equal_priorities_uniform_unit_weights(rng):
    buf = PrioritizedReplay(16, rng=rng)
    for _ in range(10):
        buf.insert(transition(rng), priority=2.0)
    _, w, idx = buf.sample(10, beta=0.7)
    np.testing.assert_allclose(w, 1.0)
    assert idx.max() < 10


def _freq_ratio(alpha, n=1_000_000):
    buf = PrioritizedReplay(2, alpha=alpha, rng=np.random.default_rng(3))
    r = np.random.default_rng(4)
    buf.insert(transition(r), priority=1.0)
    buf.insert(transition(r), priority=3.0)
    idx = buf.sample_indices(n)
    return np.mean(idx == 0), np.mean(idx == 1)


def test_per_ratio_one_to_three():
    p0, p1 = _freq_ratio(1.0)
    assert abs(p1 / p0 - 3.0) / 3.0 < 0.02


def test_per_alpha_zero_uniform():
    p0, p1 = _freq_ratio(0.0)
    assert abs(p0 - 0.5) < 0.005 and abs(p1 - 0.5) < 0.005


def test_importance_weights(rng):
    buf = PrioritizedReplay(4, alpha=1.0, rng=rng)
    for p in (1.0, 3.0):
        buf.insert(transition(rng), priority=p)
    _, w, idx = buf.sample(2, beta=1.0)
    probs = np.where(idx == 0, 0.25, 0.75)
    expect = (2 * probs) ** -1.0
    np.testing.assert_allclose(w, expect / expect.max())


def test_sum_tree_consistent(rng):
    tree = SumTree(13)
    vals = rng.uniform(0.1, 2, 13)
    tree.update(np.arange(13), vals)
    for _ in range(20):
        i = rng.integers(13, size=3)
        v = rng.uniform(0.1, 2, 3)
        tree.update(i, v)
        vals[i] = v
    assert math.isclose(tree.total, vals.sum(), rel_tol=1e-12)
    nodes = tree.tree
    for k in range(1, tree.n_leaves):
        assert math.isclose(nodes[k], nodes[2 * k] + nodes[2 * k + 1], rel_tol=1e-12, abs_tol=1e-12)


@given(st.lists(st.lists(st.floats(0, 1e3), min_size=4, max_size=4), min_size=1, max_size=20))
def test_priorities_stay_positive(updates):
    r = np.random.default_rng(0)
    buf = PrioritizedReplay(4, rng=r)
    for _ in range(4):
        buf.insert(transition(r))
    for u in updates:
        buf.update_priorities(np.arange(4), np.asarray(u) + 1e-6)
        assert np.all(buf.tree.leaves(np.arange(4)) > 0)
    with pytest.raises(ValueError):
        buf.update_priorities([0], [0.0])


def test_buffer_state_round_trip(rng):
    buf = PrioritizedReplay(8, rng=rng)
    for k in range(5):
        buf.insert(transition(rng, float(k)), priority=k + 1.0)
    other = PrioritizedReplay(8)
    other.load_state_arrays(buf.state_arrays())
    assert len(other) == 5 and other.next == buf.next
    np.testing.assert_array_equal(other.tree.leaves(np.arange(5)), buf.tree.leaves(np.arange(5)))
    np.testing.assert_array_equal(other.data["ft"][:5], buf.data["ft"][:5])


# -- targets -------------------------------------------------------------------------

def nets(seed=0):
    r = np.random.default_rng(seed)
    return PolicyNet(TINY, r), QNet(TINY, r), QNet(TINY, r)


def test_gamma_zero_target_is_reward(rng):
    pi, q1, q2 = nets()
    b = random_batch(rng, 6)
    y = critic_targets(b, pi, q1, q2, 0.3, 0.0, rng.normal(size=(6, ACTION_DIM)))
    np.testing.assert_array_equal(y, b.reward)


def test_terminal_drops_bootstrap(rng):
    pi, q1, q2 = nets()
    b = random_batch(rng, 6)
    b.terminal[:] = True
    y = critic_targets(b, pi, q1, q2, 0.3, 0.99, rng.normal(size=(6, ACTION_DIM)))
    np.testing.assert_array_equal(y, b.reward)


def test_timeout_bootstraps_terminal_does_not(rng):
    buf = PrioritizedReplay(4, rng=rng)
    buf.insert(transition(rng, 1.0, terminal=False, timeout=True))
    buf.insert(transition(rng, 1.0, terminal=True))
    batch, _, idx = buf.sample(2)
    order = np.argsort(idx)
    pi, q1, q2 = nets()
    noise = np.random.default_rng(1).normal(size=(2, ACTION_DIM))
    y = critic_targets(batch, pi, q1, q2, 0.2, 0.9, noise)[order]
    assert y[1] == 1.0
    assert y[0] != 1.0


# independent loop-based forward passes for the oracle

def _dense(p, name, x, relu):
    z = x @ p[f"{name}.W"] + p[f"{name}.b"]
    return np.maximum(z, 0) if relu else z


def _conv(p, name, x, k, d):
    T = x.shape[0]
    W, b = p[f"{name}.W"], p[f"{name}.b"]
    y = np.zeros((T, W.shape[2]))
    for t in range(T):
        y[t] = b
        for j in range(k):
            src = t - (k - 1 - j) * d
            if src >= 0:
                y[t] += x[src] @ W[j]
    return y


def _tcn(p, prefix, ft):
    h = ft
    for i, d in enumerate(TINY.tcn_dilations):
        blk = f"{prefix}block{i}"
        h1 = np.maximum(_conv(p, f"{blk}.conv1", h, TINY.tcn_kernel, d), 0)
        h2 = np.maximum(_conv(p, f"{blk}.conv2", h1, TINY.tcn_kernel, d), 0)
        res = _dense(p, f"{blk}.proj", h, False) if f"{blk}.proj.W" in p else h
        h = np.maximum(h2 + res, 0)
    return _dense(p, f"{prefix}head", h[-1], True)


def _encode(p, proprio, ft):
    fp = _dense(p, "proprio1", _dense(p, "proprio0", proprio, True), True)
    return np.concatenate([fp, _tcn(p, "tcn.", ft)])


def oracle_target(pi, q1, q2, b, alpha, gamma, noise, i):
    pp, p1, p2 = pi.parameters(), q1.parameters(), q2.parameters()
    out = _dense(pp, "head1", _dense(pp, "head0", _encode(pp, b.next_proprio[i], b.next_ft[i]), True), False)
    mean, log_std = out[:ACTION_DIM], np.clip(out[ACTION_DIM:], -20, 2)
    u = mean + np.exp(log_std) * noise[i]
    a = np.tanh(u)
    logp = 0.0
    for j in range(ACTION_DIM):
        logp += (-0.5 * noise[i, j] ** 2 - log_std[j] - 0.5 * math.log(2 * math.pi)
                 - math.log(1 - math.tanh(u[j]) ** 2))
    qs = []
    for p in (p1, p2):
        x = np.concatenate([_encode(p, b.next_proprio[i], b.next_ft[i]), a])
        qs.append(float(_dense(p, "head1", _dense(p, "head0", x, True), False)[0]))
    return b.reward[i] + gamma * (1 - b.terminal[i]) * (min(qs) - alpha * logp)


def test_targets_match_hand_rolled_oracle(rng):
    pi, q1, q2 = nets(4)
    b = random_batch(rng, 5)
    b.terminal[:] = [False, True, False, False, True]
    noise = rng.normal(size=(5, ACTION_DIM)) * 0.5
    y = critic_targets(b, pi, q1, q2, 0.37, 0.97, noise)
    for i in range(5):
        assert abs(y[i] - oracle_target(pi, q1, q2, b, 0.37, 0.97, noise, i)) < 1e-10


# -- polyak / update ----------------------------------------------------------------

def test_polyak_examples():
    t, o = {"w": np.zeros(3)}, {"w": np.ones(3)}
    polyak_update(t, o, 0.995)
    np.testing.assert_allclose(t["w"], 0.005)
    polyak_update(t, o, 1.0)
    np.testing.assert_allclose(t["w"], 0.005)
    polyak_update(t, o, 0.0)
    np.testing.assert_array_equal(t["w"], 1.0)
    with pytest.raises(ValueError):
        polyak_update({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.5)


def test_update_reports_and_moves(rng):
    agent = SACAgent(SacConfig(batch_size=8), TINY, rng=np.random.default_rng(0))
    before = {k: v.copy() for k, v in agent.q1_targ.parameters().items()}
    b = random_batch(rng, 8)
    rep = agent.update(b)
    assert rep.priorities.shape == (8,) and np.all(rep.priorities > 0)
    assert agent.alpha > 0 and agent.alpha != 1.0
    for k, v in agent.q1_targ.parameters().items():
        expect = 0.995 * before[k] + 0.005 * agent.q1.parameters()[k]
        np.testing.assert_allclose(v, expect, rtol=1e-12, atol=1e-15)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_update_aborts(rng):
    agent = SACAgent(SacConfig(batch_size=4), TINY, rng=np.random.default_rng(0))
    snap = {k: v.copy() for k, v in agent.q1.parameters().items()}
    b = random_batch(rng, 4)
    b.reward[0] = np.inf
    with pytest.raises(NonFiniteLossError):
        agent.update(b)
    for k, v in agent.q1.parameters().items():
        np.testing.assert_array_equal(v, snap[k])


def test_agent_state_round_trip(rng):
    a = SACAgent(SacConfig(batch_size=4), TINY, rng=np.random.default_rng(0))
    a.update(random_batch(rng, 4))
    b = SACAgent(SacConfig(batch_size=4), TINY, rng=np.random.default_rng(9))
    b.load_state_blocks(a.state_blocks())
    for k, v in a.state_blocks().items():
        np.testing.assert_array_equal(b.state_blocks()[k], v)


def test_config_validation():
    with pytest.raises(ValueError):
        SacConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SacConfig(polyak=0.0)
