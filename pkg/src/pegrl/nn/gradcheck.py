"""Central finite-difference gradient verification."""
from __future__ import annotations

from typing import Callable

import numpy as np


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, index, eps: float) -> float:
    old = arr[index]
    arr[index] = old + eps
    fp = f()
    arr[index] = old - eps
    fm = f()
    arr[index] = old
    return (fp - fm) / (2.0 * eps)


def grad_check(f: Callable[[], float], params: dict, analytic: dict, eps: float = 1e-6,
               max_per_param: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-6) -> float:
    """Largest relative error between `analytic` and central differences of `f`.

    `f` re-evaluates the scalar loss from the current contents of `params`
    (perturbed in place and restored). With `max_per_param`, a random subset
    of entries of each array is checked.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, arr in params.items():
        flat = range(arr.size)
        if max_per_param is not None and arr.size > max_per_param:
            flat = rng.choice(arr.size, max_per_param, replace=False)
        g = np.asarray(analytic[name])
        for i in flat:
            idx = np.unravel_index(int(i), arr.shape)
            num = numeric_gradient(f, arr, idx, eps)
            worst = max(worst, float(relative_error(g[idx], num, floor)))
    return worst
