"""Prioritized experience replay backed by an array sum-tree."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from ..nn.nets import ACTION_DIM, FT_CHANNELS, FT_WINDOW, PROPRIO_DIM


class InvalidTransitionError(ValueError):
    pass


class BufferNotReady(RuntimeError):
    pass


class SumTree:
    """Complete binary tree over a power-of-two number of leaves."""

    def __init__(self, capacity: int):
        self.n_leaves = 1 << max(0, int(np.ceil(np.log2(max(capacity, 1)))))
        self.tree = np.zeros(2 * self.n_leaves)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self, idx) -> np.ndarray:
        return self.tree[self.n_leaves + np.asarray(idx)]

    def update(self, idx, values):
        pos = np.asarray(idx, dtype=np.int64) + self.n_leaves
        self.tree[pos] = values
        pos = np.unique(pos // 2)
        while pos.size and pos[0] >= 1:
            self.tree[pos] = self.tree[2 * pos] + self.tree[2 * pos + 1]
            if pos[0] == 1:
                break
            pos = np.unique(pos // 2)

    def find(self, values) -> np.ndarray:
        """Leaf index for each cumulative mass in [0, total)."""
        v = np.array(values, dtype=float)
        pos = np.ones(v.shape, dtype=np.int64)
        while pos[0] < self.n_leaves if pos.size else False:
            left = 2 * pos
            lv = self.tree[left]
            go_right = v >= lv
            v = np.where(go_right, v - lv, v)
            pos = np.where(go_right, left + 1, left)
        return pos - self.n_leaves


@dataclass
class Transition:
    proprio: np.ndarray
    ft: np.ndarray
    action: np.ndarray
    reward: float
    next_proprio: np.ndarray
    next_ft: np.ndarray
    terminal: bool
    timeout: bool = False


@dataclass
class Batch:
    proprio: np.ndarray
    ft: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_proprio: np.ndarray
    next_ft: np.ndarray
    terminal: np.ndarray


_FIELDS = {
    "proprio": (PROPRIO_DIM,),
    "ft": (FT_WINDOW, FT_CHANNELS),
    "action": (ACTION_DIM,),
    "next_proprio": (PROPRIO_DIM,),
    "next_ft": (FT_WINDOW, FT_CHANNELS),
}


class PrioritizedReplay:
    def __init__(self, capacity: int, alpha: float = 0.6, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity, self.alpha = capacity, alpha
        self.rng = rng if rng is not None else np.random.default_rng()
        self.tree = SumTree(capacity)
        self.data = {k: np.zeros((capacity,) + s, dtype=dtype) for k, s in _FIELDS.items()}
        self.reward = np.zeros(capacity, dtype=np.float64)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.timeout = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.next = 0
        self.max_priority = 1.0
        self._lock = threading.Lock()

    def __len__(self):
        return self.size

    def insert(self, t: Transition, priority: float | None = None):
        if priority is None:
            priority = self.max_priority
        if not priority > 0 or not np.isfinite(priority):
            raise InvalidTransitionError(f"priority must be positive and finite, got {priority}")
        for k, shape in _FIELDS.items():
            v = np.asarray(getattr(t, k))
            if v.shape != shape:
                raise InvalidTransitionError(f"{k}: expected shape {shape}, got {v.shape}")
        if not np.isfinite(t.reward):
            raise InvalidTransitionError("reward must be finite")
        with self._lock:
            i = self.next
            for k in _FIELDS:
                self.data[k][i] = getattr(t, k)
            self.reward[i] = t.reward
            self.terminal[i] = bool(t.terminal)
            self.timeout[i] = bool(t.timeout)
            self.tree.update([i], [priority ** self.alpha])
            self.max_priority = max(self.max_priority, priority)
            self.next = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def probabilities(self) -> np.ndarray:
        p = self.tree.leaves(np.arange(self.size))
        return p / p.sum()

    def sample(self, n: int, beta: float = 0.4):
        """Draw n indices with probability p_i^alpha / sum_j p_j^alpha.

        Returns (batch, importance weights normalized by their max, indices).
        """
        with self._lock:
            if self.size < n or self.size == 0:
                raise BufferNotReady(f"buffer holds {self.size} transitions, {n} requested")
            idx = self.sample_indices(n)
            total = self.tree.total
            probs = self.tree.leaves(idx) / total
            weights = (self.size * probs) ** (-beta)
            weights /= weights.max()
            batch = Batch(
                proprio=self.data["proprio"][idx], ft=self.data["ft"][idx], action=self.data["action"][idx],
                reward=self.reward[idx], next_proprio=self.data["next_proprio"][idx],
                next_ft=self.data["next_ft"][idx], terminal=self.terminal[idx],
            )
        return batch, weights, idx

    def sample_indices(self, n: int) -> np.ndarray:
        u = self.rng.uniform(0.0, self.tree.total, n)
        idx = self.tree.find(u)
        # guard against float round-off landing on an empty leaf
        return np.minimum(idx, self.size - 1)

    def update_priorities(self, idx, priorities):
        pr = np.asarray(priorities, dtype=float)
        if np.any(~np.isfinite(pr)) or np.any(pr <= 0):
            raise ValueError("priorities must be positive and finite")
        with self._lock:
            self.tree.update(idx, pr ** self.alpha)
            self.max_priority = max(self.max_priority, float(pr.max()))

    def state_arrays(self) -> dict:
        n = self.size
        out = {k: v[:n] for k, v in self.data.items()}
        out.update(reward=self.reward[:n], terminal=self.terminal[:n], timeout=self.timeout[:n],
                   priority=self.tree.leaves(np.arange(n)),
                   meta=np.array([self.size, self.next, self.max_priority, self.alpha]))
        return out

    def load_state_arrays(self, arrays: dict):
        n = int(arrays["meta"][0])
        for k in self.data:
            self.data[k][:n] = arrays[k]
        self.reward[:n] = arrays["reward"]
        self.terminal[:n] = arrays["terminal"]
        self.timeout[:n] = arrays["timeout"]
        self.tree = SumTree(self.capacity)
        self.tree.update(np.arange(n), arrays["priority"])
        self.size, self.next = n, int(arrays["meta"][1])
        self.max_priority = float(arrays["meta"][2])
