"""Policy and critic networks built from the layers module."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from .layers import TCN, Dense, ShapeError

PROPRIO_DIM = 37
FT_WINDOW = 12
FT_CHANNELS = 6
ACTION_DIM = 24
FEATURE_DIM = 32


@dataclass(frozen=True)
class NetConfig:
    proprio_hidden: int = 64
    feature_dim: int = FEATURE_DIM
    head_hidden: int = 64
    tcn_channels: int = 32
    tcn_kernel: int = 3
    tcn_dilations: tuple = (1, 2)
    policy: str = "tcn"  # or "mlp"
    dtype: str = "float32"


class Module:
    """Named collection of layers with a flat parameter view."""

    def __init__(self):
        self._layers: dict = {}

    def add(self, name, layer):
        self._layers[name] = layer
        return layer

    def parameters(self) -> dict:
        out = {}
        for lname, layer in self._layers.items():
            for pname, arr in layer.params.items():
                out[f"{lname}.{pname}"] = arr
        return out

    def load_parameters(self, values: dict):
        params = self.parameters()
        missing = set(params) - set(values)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, arr in params.items():
            v = np.asarray(values[k])
            if v.shape != arr.shape:
                raise ShapeError(f"{k}: expected {arr.shape}, got {v.shape}")
            arr[...] = v

    def copy_from(self, other: "Module"):
        self.load_parameters(other.parameters())

    @staticmethod
    def _prefixed(prefix, grads):
        return {f"{prefix}.{k}": v for k, v in grads.items()}


def _dense_chain_forward(layers, x):
    caches = []
    for layer in layers:
        x, c = layer.forward(x)
        caches.append(c)
    return x, caches


def _dense_chain_backward(module, names, layers, caches, dy, grads):
    for name, layer, c in zip(reversed(names), reversed(layers), reversed(caches)):
        dy, g = layer.backward(c, dy)
        grads.update(module._prefixed(name, g))
    return dy


class MultimodalEncoder(Module):
    """Proprioception MLP and F/T TCN, concatenated into one feature vector."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator, prefix: str = ""):
        super().__init__()
        dtype = np.dtype(cfg.dtype)
        self.p_names = [f"{prefix}proprio0", f"{prefix}proprio1"]
        self.p_layers = [
            self.add(self.p_names[0], Dense(PROPRIO_DIM, cfg.proprio_hidden, rng, "relu", dtype)),
            self.add(self.p_names[1], Dense(cfg.proprio_hidden, cfg.feature_dim, rng, "relu", dtype)),
        ]
        self.tcn_name = f"{prefix}tcn"
        self.tcn = self.add(self.tcn_name, TCN(FT_CHANNELS, cfg.tcn_channels, cfg.tcn_kernel, cfg.tcn_dilations,
                                                cfg.feature_dim, rng, FT_WINDOW, dtype))
        self.out_dim = 2 * cfg.feature_dim

    def encode(self, proprio, ft):
        if proprio.ndim != 2 or proprio.shape[1] != PROPRIO_DIM:
            raise ShapeError(f"proprioception must be (batch, {PROPRIO_DIM}), got {proprio.shape}")
        fp, cp = _dense_chain_forward(self.p_layers, proprio)
        ff, cf = self.tcn.forward(ft)
        return np.concatenate([fp, ff], axis=1), (cp, cf, fp.shape[1])

    def encode_backward(self, cache, dfeat, grads):
        cp, cf, n = cache
        _dense_chain_backward(self, self.p_names, self.p_layers, cp, dfeat[:, :n], grads)
        _, g = self.tcn.backward(cf, dfeat[:, n:])
        grads.update(self._prefixed(self.tcn_name, g))


class PolicyNet(MultimodalEncoder):
    """Gaussian policy head on the 64-dim multimodal feature."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        dtype = np.dtype(cfg.dtype)
        self.h_names = ["head0", "head1"]
        self.h_layers = [
            self.add("head0", Dense(self.out_dim, cfg.head_hidden, rng, "relu", dtype)),
            self.add("head1", Dense(cfg.head_hidden, 2 * ACTION_DIM, rng, None, dtype)),
        ]

    def features(self, proprio, ft):
        feat, cache = self.encode(proprio, ft)
        return feat, cache

    def forward(self, proprio, ft):
        feat, ce = self.encode(proprio, ft)
        out, ch = _dense_chain_forward(self.h_layers, feat)
        mean = out[:, :ACTION_DIM]
        log_std, mask = dist.clamp_log_std(out[:, ACTION_DIM:])
        return mean, log_std, (ce, ch, mask)

    def backward(self, cache, dmean, dlog_std) -> dict:
        ce, ch, mask = cache
        grads = {}
        dout = np.concatenate([dmean, dlog_std * mask], axis=1)
        dfeat = _dense_chain_backward(self, self.h_names, self.h_layers, ch, dout, grads)
        self.encode_backward(ce, dfeat, grads)
        return grads


class MLPPolicy(Module):
    """Two dense layers on the flattened observation (ablation baseline)."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        dtype = np.dtype(cfg.dtype)
        n_in = PROPRIO_DIM + FT_WINDOW * FT_CHANNELS
        self.names = ["fc0", "fc1"]
        self.layers = [
            self.add("fc0", Dense(n_in, cfg.head_hidden, rng, "relu", dtype)),
            self.add("fc1", Dense(cfg.head_hidden, 2 * ACTION_DIM, rng, None, dtype)),
        ]

    def forward(self, proprio, ft):
        if proprio.ndim != 2 or proprio.shape[1] != PROPRIO_DIM or ft.shape[1:] != (FT_WINDOW, FT_CHANNELS):
            raise ShapeError("bad observation shapes for MLP policy")
        x = np.concatenate([proprio, ft.reshape(len(ft), -1)], axis=1)
        out, c = _dense_chain_forward(self.layers, x)
        mean = out[:, :ACTION_DIM]
        log_std, mask = dist.clamp_log_std(out[:, ACTION_DIM:])
        return mean, log_std, (c, mask)

    def backward(self, cache, dmean, dlog_std) -> dict:
        c, mask = cache
        grads = {}
        dout = np.concatenate([dmean, dlog_std * mask], axis=1)
        _dense_chain_backward(self, self.names, self.layers, c, dout, grads)
        return grads


class QNet(MultimodalEncoder):
    """Critic: multimodal encoder with the action appended before the head."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        dtype = np.dtype(cfg.dtype)
        self.h_names = ["head0", "head1"]
        self.h_layers = [
            self.add("head0", Dense(self.out_dim + ACTION_DIM, cfg.head_hidden, rng, "relu", dtype)),
            self.add("head1", Dense(cfg.head_hidden, 1, rng, None, dtype)),
        ]

    def forward(self, proprio, ft, action):
        if action.ndim != 2 or action.shape[1] != ACTION_DIM:
            raise ShapeError(f"action must be (batch, {ACTION_DIM}), got {action.shape}")
        feat, ce = self.encode(proprio, ft)
        x = np.concatenate([feat, action], axis=1)
        out, ch = _dense_chain_forward(self.h_layers, x)
        return out[:, 0], (ce, ch)

    def backward(self, cache, dq, need_params: bool = True):
        """Returns (param grads, d action). With need_params=False only the
        action gradient is computed (the encoder pass is skipped)."""
        ce, ch = cache
        grads = {}
        dx = _dense_chain_backward(self, self.h_names, self.h_layers, ch, dq[:, None], grads)
        n = self.out_dim
        if need_params:
            self.encode_backward(ce, dx[:, :n], grads)
        return grads, dx[:, n:]


def make_policy(cfg: NetConfig, rng: np.random.Generator):
    if cfg.policy == "tcn":
        return PolicyNet(cfg, rng)
    if cfg.policy == "mlp":
        return MLPPolicy(cfg, rng)
    raise ValueError(f"unknown policy architecture {cfg.policy!r}")


class NumericError(FloatingPointError):
    pass


def policy_sample(net, proprio, ft, rng: np.random.Generator | None, deterministic: bool = False):
    """Sample squashed actions and their log-probabilities.

    Single observations (proprio shape (37,)) are promoted to a batch of one
    and returned unbatched.
    """
    single = proprio.ndim == 1
    if single:
        proprio, ft = proprio[None], ft[None]
    mean, log_std, _ = net.forward(proprio, ft)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
        raise NumericError(f"non-finite policy output: mean={mean}, log_std={log_std}")
    if deterministic:
        a = np.tanh(mean)
        logp = np.full(len(a), np.nan)
    else:
        noise = rng.standard_normal(mean.shape).astype(mean.dtype)
        a, logp, _ = dist.sample(mean, log_std, noise)
    a = dist.squash_safe(a)
    if single:
        return a[0], logp[0]
    return a, logp
