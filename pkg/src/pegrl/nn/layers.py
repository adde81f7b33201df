"""Layers with explicit forward/backward passes.

Every layer owns a ``params`` dict of arrays. ``forward`` returns the output
and a cache; ``backward(cache, dy)`` returns the input gradient and a dict of
parameter gradients. Layers never stash state between calls, so the same
layer can be evaluated several times before any backward pass.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def relu(x):
    return np.maximum(x, 0)


class Layer:
    params: dict

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, activation=None, dtype=np.float32,
                 init_scale: float = 1.0):
        if activation not in (None, "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        bound = init_scale / np.sqrt(n_in)
        self.params = {
            "W": rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype),
            "b": rng.uniform(-bound, bound, n_out).astype(dtype),
        }
        self.activation = activation
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense expects last dim {self.n_in}, got {x.shape}")
        z = x @ self.params["W"] + self.params["b"]
        y = relu(z) if self.activation == "relu" else z
        return y, (x, z)

    def backward(self, cache, dy):
        x, z = cache
        if self.activation == "relu":
            dy = dy * (z > 0)
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        grads = {"W": x2.T @ dy2, "b": dy2.sum(axis=0)}
        dx = dy @ self.params["W"].T
        return dx, grads


class CausalConv1d(Layer):
    """Dilated causal convolution over inputs shaped (batch, time, channels).

    Output at step t only reads inputs at steps t, t-d, ..., t-(k-1)d; the
    sequence is left-padded with zeros.
    """

    def __init__(self, c_in: int, c_out: int, kernel_size: int, dilation: int, rng: np.random.Generator,
                 dtype=np.float32):
        bound = 1.0 / np.sqrt(c_in * kernel_size)
        self.params = {
            "W": rng.uniform(-bound, bound, (kernel_size, c_in, c_out)).astype(dtype),
            "b": rng.uniform(-bound, bound, c_out).astype(dtype),
        }
        self.k, self.d = kernel_size, dilation
        self.c_in, self.c_out = c_in, c_out
        self.pad = (kernel_size - 1) * dilation

    def _padded(self, x):
        B, T, C = x.shape
        return np.concatenate([np.zeros((B, self.pad, C), dtype=x.dtype), x], axis=1)

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ShapeError(f"conv expects (batch, time, {self.c_in}), got {x.shape}")
        B, T, C = x.shape
        xpad = self._padded(x)
        W = self.params["W"]
        # tap j reads the input shifted back by (k - 1 - j) * d steps
        y = xpad[:, :T].reshape(B * T, C) @ W[0]
        for j in range(1, self.k):
            y += xpad[:, j * self.d: j * self.d + T].reshape(B * T, C) @ W[j]
        y += self.params["b"]
        return y.reshape(B, T, self.c_out), xpad

    def backward(self, cache, dy):
        xpad = cache
        B, T, C = dy.shape[0], dy.shape[1], self.c_in
        dy2 = dy.reshape(-1, self.c_out)
        W = self.params["W"]
        dW = np.empty_like(W)
        dxpad = np.zeros((B, T + self.pad, C), dtype=dy.dtype)
        for j in range(self.k):
            sl = slice(j * self.d, j * self.d + T)
            dW[j] = xpad[:, sl].reshape(-1, C).T @ dy2
            dxpad[:, sl] += (dy2 @ W[j].T).reshape(B, T, C)
        grads = {"W": dW, "b": dy.sum(axis=(0, 1))}
        return dxpad[:, self.pad:], grads


class TCNBlock(Layer):
    """Two causal convolutions with ReLU, a residual connection (1x1
    projection when channel counts differ) and an output ReLU."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, dilation: int, rng, dtype=np.float32):
        self.conv1 = CausalConv1d(c_in, c_out, kernel_size, dilation, rng, dtype)
        self.conv2 = CausalConv1d(c_out, c_out, kernel_size, dilation, rng, dtype)
        self.proj = Dense(c_in, c_out, rng, dtype=dtype) if c_in != c_out else None
        self.dilation = dilation
        self.kernel_size = kernel_size
        self.params = {}
        for name, sub in self.sublayers():
            for k, v in sub.params.items():
                self.params[f"{name}.{k}"] = v

    def sublayers(self):
        out = [("conv1", self.conv1), ("conv2", self.conv2)]
        if self.proj is not None:
            out.append(("proj", self.proj))
        return out

    def forward(self, x):
        z1, c1 = self.conv1.forward(x)
        h1 = relu(z1)
        z2, c2 = self.conv2.forward(h1)
        h2 = relu(z2)
        if self.proj is not None:
            res, cp = self.proj.forward(x)
        else:
            res, cp = x, None
        z = h2 + res
        y = relu(z)
        return y, (c1, z1, c2, z2, cp, z, h1)

    def backward(self, cache, dy):
        c1, z1, c2, z2, cp, z, _ = cache
        dz = dy * (z > 0)
        grads = {}
        dh1, g = self.conv2.backward(c2, dz * (z2 > 0))
        grads.update({f"conv2.{k}": v for k, v in g.items()})
        dx, g = self.conv1.backward(c1, dh1 * (z1 > 0))
        grads.update({f"conv1.{k}": v for k, v in g.items()})
        if self.proj is not None:
            dxr, g = self.proj.backward(cp, dz)
            grads.update({f"proj.{k}": v for k, v in g.items()})
            dx = dx + dxr
        else:
            dx = dx + dz
        return dx, grads

    def activations(self, cache):
        """Internal activations (hidden conv output, block output pre-ReLU)."""
        return {"hidden": relu(cache[1]), "conv2": relu(cache[3]), "sum": cache[5]}


class TCN(Layer):
    """Stack of TCN blocks; the final time step is projected to a feature vector."""

    def __init__(self, c_in: int, channels: int, kernel_size: int, dilations, n_features: int, rng,
                 window: int, dtype=np.float32):
        self.blocks = []
        c = c_in
        for d in dilations:
            self.blocks.append(TCNBlock(c, channels, kernel_size, d, rng, dtype))
            c = channels
        self.head = Dense(channels, n_features, rng, activation="relu", dtype=dtype)
        self.window, self.c_in = window, c_in
        self.kernel_size, self.dilations = kernel_size, tuple(dilations)
        self.params = {}
        for name, sub in self.sublayers():
            for k, v in sub.params.items():
                self.params[f"{name}.{k}"] = v

    @property
    def receptive_field(self) -> int:
        return 1 + 2 * (self.kernel_size - 1) * sum(self.dilations)

    def sublayers(self):
        return [(f"block{i}", b) for i, b in enumerate(self.blocks)] + [("head", self.head)]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1:] != (self.window, self.c_in):
            raise ShapeError(f"TCN expects (batch, {self.window}, {self.c_in}), got {x.shape}")
        caches = []
        h = x
        for b in self.blocks:
            h, c = b.forward(h)
            caches.append(c)
        y, ch = self.head.forward(h[:, -1, :])
        return y, (caches, ch, h.shape)

    def backward(self, cache, dy):
        caches, ch, hshape = cache
        grads = {}
        dlast, g = self.head.backward(ch, dy)
        grads.update({f"head.{k}": v for k, v in g.items()})
        dh = np.zeros(hshape, dtype=dy.dtype)
        dh[:, -1, :] = dlast
        for i in reversed(range(len(self.blocks))):
            dh, g = self.blocks[i].backward(caches[i], dh)
            grads.update({f"block{i}.{k}": v for k, v in g.items()})
        return dh, grads

    def activations(self, cache):
        caches = cache[0]
        return [b.activations(c) for b, c in zip(self.blocks, caches)]
