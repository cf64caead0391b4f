"""Minimal numpy layers with hand-written backward passes.

Tensors are NCHW. Every layer caches what its backward pass needs during
``forward`` and accumulates parameter gradients into ``self.grads``.
"""

from __future__ import annotations

from typing import Dict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    params: Dict[str, np.ndarray]
    grads: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv2D(Layer):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.pad = k // 2
        self.input_grad = True  # the first layer has no use for d(loss)/d(input)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = c_in * k * k
        # He initialisation
        self.params["weight"] = (rng.standard_normal((c_out, c_in, k, k)) *
                                 np.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def out_size(self, n: int) -> int:
        return (n + 2 * self.pad - self.k) // self.stride + 1

    def forward(self, x, train=False):
        N, C, H, W = x.shape
        if C != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {C}")
        p, k, s = self.pad, self.k, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        Ho, Wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
        w = self.params["weight"].reshape(self.c_out, -1)
        out = cols @ w.T + self.params["bias"]
        self._cache = (x.shape, xp.shape, cols, Ho, Wo)
        return out.reshape(N, Ho, Wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, grad):
        x_shape, xp_shape, cols, Ho, Wo = self._cache
        N, C, H, W = x_shape
        k, s, p = self.k, self.stride, self.pad
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        w = self.params["weight"].reshape(self.c_out, -1)
        self.grads["weight"] += (g.T @ cols).reshape(self.params["weight"].shape)
        self.grads["bias"] += g.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (g @ w).reshape(N, Ho, Wo, C, k, k)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + H, p:p + W] if p else dxp


class BatchNorm2D(Layer):
    """Per-channel normalisation; batch statistics in training, running averages otherwise."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            n = x.size // x.shape[1]
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
            unbiased = var * n / max(n - 1, 1)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(x.dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, train)
        return self.params["gamma"][None, :, None, None] * xhat + self.params["beta"][None, :, None, None]

    def backward(self, grad):
        xhat, inv_std, train = self._cache
        gamma = self.params["gamma"][None, :, None, None]
        self.grads["gamma"] += (grad * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += grad.sum(axis=(0, 2, 3))
        dxhat = grad * gamma
        if not train:
            return dxhat * inv_std[None, :, None, None]
        m = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return (dxhat - m - xhat * mx) * inv_std[None, :, None, None]


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2; trailing odd rows/columns are dropped."""

    def forward(self, x, train=False):
        N, C, H, W = x.shape
        H2, W2 = H // 2, W // 2
        xc = x[:, :, :2 * H2, :2 * W2]
        blocks = xc.reshape(N, C, H2, 2, W2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2, W2, 4)
        idx = blocks.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        (N, C, H, W), idx = self._cache
        H2, W2 = H // 2, W // 2
        blocks = np.zeros((N, C, H2, W2, 4), dtype=grad.dtype)
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        dx = np.zeros((N, C, H, W), dtype=grad.dtype)
        dx[:, :, :2 * H2, :2 * W2] = blocks.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * H2, 2 * W2)
        return dx


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32, zero_init: bool = False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if zero_init:
            w = np.zeros((n_out, n_in))
        else:
            w = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        self.params["weight"] = w.astype(dtype)
        self.params["bias"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] += grad.T @ self._x
        self.grads["bias"] += grad.sum(axis=0)
        return grad @ self.params["weight"]


def huber(pred: np.ndarray, target: np.ndarray, delta: float = 1.0):
    """Mean Huber loss and its gradient with respect to ``pred``."""
    r = pred - target
    a = np.abs(r)
    quad = a <= delta
    loss = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    grad = np.where(quad, r, delta * np.sign(r)) / r.size
    return float(loss.mean()), grad.astype(pred.dtype)
