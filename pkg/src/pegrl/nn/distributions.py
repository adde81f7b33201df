"""Tanh-squashed diagonal Gaussian."""
from __future__ import annotations

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def _log1m_tanh2(u):
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def sample(mean, log_std, noise):
    """Reparameterized sample. Returns (action, log_prob, cache)."""
    std = np.exp(log_std)
    u = mean + std * noise
    a = np.tanh(u)
    logp = np.sum(-0.5 * noise ** 2 - log_std - _HALF_LOG_2PI - _log1m_tanh2(u), axis=-1)
    return a, logp, (std, noise, a)


def sample_backward(cache, da, dlogp):
    """Gradients w.r.t. (mean, log_std) given upstream da and dlogp."""
    std, noise, a = cache
    dlogp = np.asarray(dlogp)[..., None] if np.ndim(dlogp) else dlogp
    du = da * (1.0 - a ** 2) + dlogp * 2.0 * a
    dmean = du
    dlog_std = du * std * noise - dlogp
    return dmean, dlog_std


def log_prob(mean, log_std, action):
    """Log-density of squashed actions strictly inside (-1, 1)."""
    u = np.arctanh(action)
    z = (u - mean) / np.exp(log_std)
    return np.sum(-0.5 * z ** 2 - log_std - _HALF_LOG_2PI - _log1m_tanh2(u), axis=-1)


def clamp_log_std(raw):
    """Clamp with a pass-through mask for the backward pass."""
    out = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
    return out, mask


def squash_safe(a, margin=1e-6):
    """Keep sampled actions strictly inside (-1, 1) once rounded to float32."""
    return np.clip(a, -1.0 + margin, 1.0 - margin)
