"""Minimal neural-net primitives on numpy arrays.

Everything is float64, channels-last (N, H, W, C), stride 1, odd square
kernels with same-padding. Convolutions are computed as nine shifted
matmuls rather than im2col so backward passes never materialize large
column matrices. Each forward returns a cache consumed by the matching
backward; backwards return gradients in the same layout as their inputs.
"""

from __future__ import annotations

import numpy as np


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded stride-1 convolution. w has shape (kh, kw, cin, cout)."""
    kh, kw, cin, cout = w.shape
    n, h, width, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.empty((n, h, width, cout))
    out[:] = b
    for dy in range(kh):
        for dx in range(kw):
            out += xp[:, dy : dy + h, dx : dx + width, :] @ w[dy, dx]
    return out, (xp, w, x.shape)


def conv2d_backward(dout: np.ndarray, cache):
    xp, w, x_shape = cache
    kh, kw, cin, cout = w.shape
    n, h, width, _ = x_shape
    ph, pw = kh // 2, kw // 2
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for dy in range(kh):
        for dx in range(kw):
            window = xp[:, dy : dy + h, dx : dx + width, :]
            dw[dy, dx] = np.tensordot(window, dout, axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, dy : dy + h, dx : dx + width, :] += dout @ w[dy, dx].T
    db = dout.sum(axis=(0, 1, 2))
    dx = dxp[:, ph : ph + h, pw : pw + width, :]
    return dx, dw, db


def relu(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, x > 0.0


def relu_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout * cache


def avgpool2(x: np.ndarray):
    """2x2 average pooling; spatial dims must be even."""
    n, h, w, c = x.shape
    out = x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return out, x.shape


def avgpool2_backward(dout: np.ndarray, x_shape) -> np.ndarray:
    up = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2)
    return up / 4.0


def upsample_nearest2(x: np.ndarray):
    out = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    return out, x.shape


def upsample_nearest2_backward(dout: np.ndarray, x_shape) -> np.ndarray:
    n, h, w, c = x_shape
    return dout.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def dense_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; labels are integer class ids.

    Returns (loss, dlogits) with dlogits already averaged over the batch.
    """
    n = logits.shape[0]
    probs = softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Adam:
    """Adam over a dict of named parameter arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1**self.t)
            vhat = self.v[k] / (1 - b2**self.t)
            self.params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
