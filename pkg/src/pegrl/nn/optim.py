from __future__ import annotations

import numpy as np


class Adam:
    """Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, params: dict, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_blocks(self, prefix: str) -> dict:
        out = {f"{prefix}/t": np.array([self.t], dtype=float)}
        out.update({f"{prefix}/m/{k}": v for k, v in self.m.items()})
        out.update({f"{prefix}/v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_blocks(self, prefix: str, blocks: dict):
        self.t = int(blocks[f"{prefix}/t"][0])
        for k in self.m:
            self.m[k][...] = blocks[f"{prefix}/m/{k}"]
            self.v[k][...] = blocks[f"{prefix}/v/{k}"]
