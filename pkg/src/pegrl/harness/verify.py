"""Finite-difference verification of every hand-written backward pass."""
from __future__ import annotations

import numpy as np

from ..nn.gradcheck import grad_check
from ..nn.layers import TCN, Dense
from ..nn.nets import ACTION_DIM, FT_CHANNELS, FT_WINDOW, PROPRIO_DIM, NetConfig, PolicyNet, QNet, make_policy
from ..sac.agent import actor_loss, critic_loss
from ..sac.replay import Batch

SMALL_NET = NetConfig(proprio_hidden=8, feature_dim=4, head_hidden=8, tcn_channels=4, tcn_dilations=(1, 2),
                      dtype="float64")


def random_batch(rng: np.random.Generator, n: int = 4) -> Batch:
    return Batch(
        proprio=rng.normal(size=(n, PROPRIO_DIM)), ft=rng.normal(size=(n, FT_WINDOW, FT_CHANNELS)),
        action=rng.uniform(-0.9, 0.9, (n, ACTION_DIM)), reward=rng.normal(size=n),
        next_proprio=rng.normal(size=(n, PROPRIO_DIM)), next_ft=rng.normal(size=(n, FT_WINDOW, FT_CHANNELS)),
        terminal=rng.random(n) < 0.3,
    )


def check_dense(rng, eps=1e-6, max_per_param=None) -> float:
    layer = Dense(5, 4, rng, activation="relu", dtype=np.float64)
    x = rng.normal(size=(3, 5))
    r = rng.normal(size=(3, 4))
    f = lambda: float((layer.forward(x)[0] * r).sum())
    y, cache = layer.forward(x)
    dx, grads = layer.backward(cache, r)
    return max(grad_check(f, layer.params, grads, eps, max_per_param, rng),
               grad_check(f, {"x": x}, {"x": dx}, eps, max_per_param, rng))


def check_tcn(rng, eps=1e-6, max_per_param=12) -> float:
    tcn = TCN(FT_CHANNELS, 4, 3, (1, 2), 5, rng, FT_WINDOW, dtype=np.float64)
    x = rng.normal(size=(2, FT_WINDOW, FT_CHANNELS))
    r = rng.normal(size=(2, 5))
    f = lambda: float((tcn.forward(x)[0] * r).sum())
    _, cache = tcn.forward(x)
    dx, grads = tcn.backward(cache, r)
    return max(grad_check(f, tcn.params, grads, eps, max_per_param, rng),
               grad_check(f, {"x": x}, {"x": dx}, eps, max_per_param, rng))


def check_policy_head(rng, eps=1e-6, max_per_param=12, policy: str = "tcn") -> float:
    net = make_policy(NetConfig(**{**SMALL_NET.__dict__, "policy": policy}), rng)
    b = random_batch(rng)
    r1, r2 = rng.normal(size=(4, ACTION_DIM)), rng.normal(size=(4, ACTION_DIM))

    def f():
        m, ls, _ = net.forward(b.proprio, b.ft)
        return float((m * r1).sum() + (ls * r2).sum())

    _, _, cache = net.forward(b.proprio, b.ft)
    grads = net.backward(cache, r1, r2)
    return grad_check(f, net.parameters(), grads, eps, max_per_param, rng)


def check_critic_loss(rng, eps=1e-6, max_per_param=12) -> float:
    q = QNet(SMALL_NET, rng)
    b = random_batch(rng)
    y = rng.normal(size=4)
    w = rng.uniform(0.2, 1.0, 4)
    f = lambda: critic_loss(q, b, y, w)[0]
    _, grads, _ = critic_loss(q, b, y, w)
    return grad_check(f, q.parameters(), grads, eps, max_per_param, rng)


def check_actor_loss(rng, eps=1e-6, max_per_param=12) -> float:
    pi = PolicyNet(SMALL_NET, rng)
    q1, q2 = QNet(SMALL_NET, rng), QNet(SMALL_NET, rng)
    b = random_batch(rng)
    noise = rng.normal(size=(4, ACTION_DIM))
    f = lambda: actor_loss(pi, q1, q2, b, 0.2, noise)[0]
    _, grads, _ = actor_loss(pi, q1, q2, b, 0.2, noise)
    return grad_check(f, pi.parameters(), grads, eps, max_per_param, rng)


CHECKS = {
    "dense": check_dense,
    "tcn": check_tcn,
    "policy_head": check_policy_head,
    "critic_loss": check_critic_loss,
    "actor_loss": check_actor_loss,
}


def gradient_suite(seed: int = 0, eps: float = 1e-6) -> dict:
    """Max relative error per component, 64-bit networks."""
    out = {}
    for name, check in CHECKS.items():
        out[name] = check(np.random.default_rng([seed, len(out)]), eps=eps)
    return out
