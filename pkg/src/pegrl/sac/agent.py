"""Soft actor-critic with twin critics, target networks and learned temperature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import distributions as dist
from ..nn.nets import ACTION_DIM, PROPRIO_DIM, NetConfig, QNet, make_policy, policy_sample
from ..nn.optim import Adam
from .replay import Batch


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    polyak: float = 0.995
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    init_alpha: float = 1.0
    target_entropy: float = -float(ACTION_DIM)
    reward_scale: float = 1.0
    buffer_capacity: int = 1_000_000
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    warmup_steps: int = 1000
    updates_per_step: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.polyak < 1:
            raise ValueError("polyak must lie in (0, 1)")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch size and capacity must be positive")


@dataclass
class LossReport:
    critic1: float
    critic2: float
    actor: float
    alpha_loss: float
    alpha: float
    entropy: float
    priorities: np.ndarray


def polyak_update(target: dict, online: dict, rho: float):
    """target <- rho * target + (1 - rho) * online, in place."""
    if set(target) != set(online):
        raise ValueError("parameter names differ")
    for k, t in target.items():
        o = online[k]
        if t.shape != o.shape:
            raise ValueError(f"{k}: shape mismatch {t.shape} vs {o.shape}")
        t *= rho
        t += (1.0 - rho) * o


def critic_targets(batch: Batch, policy, q1_targ: QNet, q2_targ: QNet, alpha: float, gamma: float,
                   noise: np.ndarray, reward_scale: float = 1.0, obs_mask=None) -> np.ndarray:
    p2 = _mask(batch.next_proprio, obs_mask)
    mean, log_std, _ = policy.forward(p2, batch.next_ft)
    a2, logp2, _ = dist.sample(mean, log_std, noise.astype(mean.dtype))
    q1, _ = q1_targ.forward(p2, batch.next_ft, a2)
    q2, _ = q2_targ.forward(p2, batch.next_ft, a2)
    soft = np.minimum(q1, q2).astype(np.float64) - alpha * logp2.astype(np.float64)
    not_done = 1.0 - batch.terminal.astype(np.float64)
    return reward_scale * batch.reward + gamma * not_done * soft


def critic_loss(q: QNet, batch: Batch, y: np.ndarray, weights: np.ndarray, obs_mask=None):
    """Importance-weighted half squared TD error. Returns (loss, grads, td)."""
    p = _mask(batch.proprio, obs_mask)
    qv, cache = q.forward(p, batch.ft, batch.action)
    td = qv.astype(np.float64) - y
    n = len(td)
    loss = 0.5 * float(np.mean(weights * td ** 2))
    dq = (weights * td / n).astype(qv.dtype)
    grads, _ = q.backward(cache, dq)
    return loss, grads, td


def actor_loss(policy, q1: QNet, q2: QNet, batch: Batch, alpha: float, noise: np.ndarray, obs_mask=None):
    """E[alpha * log pi(a|s) - min Q(s, a)] with reparameterized actions.

    Returns (loss, grads, logp)."""
    p = _mask(batch.proprio, obs_mask)
    mean, log_std, pcache = policy.forward(p, batch.ft)
    a, logp, scache = dist.sample(mean, log_std, noise.astype(mean.dtype))
    q1v, c1 = q1.forward(p, batch.ft, a)
    q2v, c2 = q2.forward(p, batch.ft, a)
    n = len(a)
    use1 = q1v <= q2v
    qmin = np.where(use1, q1v, q2v)
    loss = float(np.mean(alpha * logp.astype(np.float64) - qmin))
    dq = np.full(n, -1.0 / n, dtype=q1v.dtype)
    _, da1 = q1.backward(c1, dq * use1, need_params=False)
    _, da2 = q2.backward(c2, dq * ~use1, need_params=False)
    dlogp = np.full(n, alpha / n, dtype=mean.dtype)
    dmean, dls = dist.sample_backward(scache, da1 + da2, dlogp)
    grads = policy.backward(pcache, dmean, dls)
    return loss, grads, logp


def _mask(proprio, mask):
    return proprio if mask is None else proprio * mask


def _finite_grads(grads: dict) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


class SACAgent:
    def __init__(self, cfg: SacConfig, net_cfg: NetConfig = NetConfig(), obs_mask=None,
                 rng: np.random.Generator | None = None):
        self.cfg, self.net_cfg = cfg, net_cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        init_rng = np.random.default_rng(self.rng.integers(2 ** 63))
        self.policy = make_policy(net_cfg, init_rng)
        self.q1 = QNet(net_cfg, init_rng)
        self.q2 = QNet(net_cfg, init_rng)
        self.q1_targ = QNet(net_cfg, init_rng)
        self.q2_targ = QNet(net_cfg, init_rng)
        self.q1_targ.copy_from(self.q1)
        self.q2_targ.copy_from(self.q2)
        self.log_alpha = np.array([np.log(cfg.init_alpha)])
        self.pi_opt = Adam(self.policy.parameters(), cfg.actor_lr)
        self.q1_opt = Adam(self.q1.parameters(), cfg.critic_lr)
        self.q2_opt = Adam(self.q2.parameters(), cfg.critic_lr)
        self.alpha_opt = Adam({"log_alpha": self.log_alpha}, cfg.alpha_lr)
        dtype = np.dtype(net_cfg.dtype)
        self.obs_mask = None if obs_mask is None else np.asarray(obs_mask, dtype=dtype).reshape(PROPRIO_DIM)
        self.n_updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def act(self, proprio, ft, deterministic: bool = False):
        dtype = np.dtype(self.net_cfg.dtype)
        p = np.asarray(proprio, dtype=dtype)
        if self.obs_mask is not None:
            p = p * self.obs_mask
        a, _ = policy_sample(self.policy, p, np.asarray(ft, dtype=dtype), self.rng, deterministic)
        return np.asarray(a, dtype=np.float64)

    def update(self, batch: Batch, weights: np.ndarray | None = None) -> LossReport:
        cfg = self.cfg
        n = len(batch.reward)
        weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        alpha = self.alpha
        noise_next = self.rng.standard_normal((n, ACTION_DIM))
        noise_pi = self.rng.standard_normal((n, ACTION_DIM))
        y = critic_targets(batch, self.policy, self.q1_targ, self.q2_targ, alpha, cfg.gamma, noise_next,
                           cfg.reward_scale, self.obs_mask)
        l1, g1, td1 = critic_loss(self.q1, batch, y, weights, self.obs_mask)
        l2, g2, td2 = critic_loss(self.q2, batch, y, weights, self.obs_mask)
        lp, gp, logp = actor_loss(self.policy, self.q1, self.q2, batch, alpha, noise_pi, self.obs_mask)
        logp = logp.astype(np.float64)
        g_alpha = -float(np.mean(logp + cfg.target_entropy))
        alpha_loss = -float(self.log_alpha[0] * np.mean(logp + cfg.target_entropy))
        losses = (l1, l2, lp, alpha_loss)
        if not (np.all(np.isfinite(losses)) and _finite_grads(g1) and _finite_grads(g2) and _finite_grads(gp)):
            raise NonFiniteLossError(
                f"non-finite SAC update at step {self.n_updates}: critic=({l1}, {l2}) actor={lp} "
                f"alpha={alpha} mean|y|={np.mean(np.abs(y))}")
        self.q1_opt.step(g1)
        self.q2_opt.step(g2)
        self.pi_opt.step(gp)
        self.alpha_opt.step({"log_alpha": np.array([g_alpha])})
        polyak_update(self.q1_targ.parameters(), self.q1.parameters(), cfg.polyak)
        polyak_update(self.q2_targ.parameters(), self.q2.parameters(), cfg.polyak)
        self.n_updates += 1
        priorities = 0.5 * (np.abs(td1) + np.abs(td2)) + 1e-6
        return LossReport(l1, l2, lp, alpha_loss, self.alpha, float(-np.mean(logp)), priorities)

    # -- persistence -------------------------------------------------------
    def state_blocks(self) -> dict:
        blocks = {}
        for name, net in self.networks().items():
            blocks.update({f"{name}/{k}": v for k, v in net.parameters().items()})
        blocks["log_alpha"] = self.log_alpha
        for name, opt in self.optimizers().items():
            blocks.update(opt.state_blocks(f"opt/{name}"))
        blocks["n_updates"] = np.array([self.n_updates], dtype=float)
        return blocks

    def load_state_blocks(self, blocks: dict):
        for name, net in self.networks().items():
            prefix = f"{name}/"
            net.load_parameters({k[len(prefix):]: v for k, v in blocks.items() if k.startswith(prefix)})
        self.log_alpha[...] = blocks["log_alpha"]
        for name, opt in self.optimizers().items():
            opt.load_state_blocks(f"opt/{name}", blocks)
        self.n_updates = int(blocks["n_updates"][0])

    def networks(self) -> dict:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2, "q1_targ": self.q1_targ,
                "q2_targ": self.q2_targ}

    def optimizers(self) -> dict:
        return {"policy": self.pi_opt, "q1": self.q1_opt, "q2": self.q2_opt, "alpha": self.alpha_opt}
