"""Minimal neural-net building blocks on numpy arrays.

Every layer implements ``forward``/``backward`` with hand-derived gradients
(checked against finite differences in the test suite) and exposes its
parameters as (name, value, grad) triples whose arrays the optimizer mutates
in place. Float32 throughout unless callers pass float64 for verification.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# Layers


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)).astype(dtype)
        self.b = np.zeros(d_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.gw += dy.T @ self._x
        self.gb += dy.sum(axis=0)
        return dy @ self.w

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w, self.gw), (f"{prefix}.b", self.b, self.gb)]


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j, :, :] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(dcols: np.ndarray, xshape, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = xshape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    dc = dcols.reshape(n, c, k, k, oh, ow)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dc[:, :, i, j]
    return dxp[:, :, pad : pad + h, pad : pad + w]


class Conv2d:
    """3x3-style convolution via im2col; stride/pad configurable."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        rng: np.random.Generator,
        k: int = 3,
        stride: int = 1,
        pad: int = 1,
        dtype=np.float32,
    ):
        self.k, self.stride, self.pad = k, stride, pad
        self.w = he_normal(rng, (out_ch, in_ch, k, k), fan_in=in_ch * k * k, dtype=dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cols = None
        self._xshape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        self._xshape = x.shape
        self._cols = _im2col(x, self.k, self.stride, self.pad)
        w2 = self.w.reshape(self.w.shape[0], -1)
        y = np.matmul(w2[None, :, :], self._cols)
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        return y.reshape(n, -1, oh, ow) + self.b[None, :, None, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n = dy.shape[0]
        dyf = dy.reshape(n, dy.shape[1], -1)
        self.gw += np.einsum("nkl,ncl->kc", dyf, self._cols).reshape(self.w.shape)
        self.gb += dy.sum(axis=(0, 2, 3))
        w2 = self.w.reshape(self.w.shape[0], -1)
        dcols = np.matmul(w2.T[None, :, :], dyf)
        return _col2im(dcols, self._xshape, self.k, self.stride, self.pad)

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w, self.gw), (f"{prefix}.b", self.b, self.gb)]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._mask

    def params(self, prefix: str):
        return []


class MaxPool2x2:
    """2x2/stride-2 max pooling; gradient routed to the argmax of each window."""

    def __init__(self):
        self._idx = None
        self._xshape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"pooling needs even spatial dims, got {h}x{w}")
        self._xshape = x.shape
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // 2, w // 2, 4
        )
        self._idx = win.argmax(axis=-1)
        return np.take_along_axis(win, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, c, h, w = self._xshape
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, self._idx[..., None], dy[..., None], axis=-1)
        return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h, w
        )

    def params(self, prefix: str):
        return []


class GlobalAvgPool:
    def __init__(self):
        self._hw = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._hw = x.shape[2], x.shape[3]
        return x.mean(axis=(2, 3))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        h, w = self._hw
        scale = np.asarray(1.0 / (h * w), dtype=dy.dtype)
        return np.broadcast_to((dy * scale)[:, :, None, None], dy.shape + (h, w)).copy()

    def params(self, prefix: str):
        return []


# ---------------------------------------------------------------------------
# Loss


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(
    logits: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray | None = None,
    class_mask: np.ndarray | None = None,
):
    """Weighted cross-entropy.

    Returns (loss, dlogits, per_sample_losses). ``sample_weights`` defaults
    to 1/N each; ``class_mask`` (bool per class) excludes absent classes from
    the softmax so they receive no gradient pressure.
    """
    n, c = logits.shape
    work = logits
    if class_mask is not None:
        if class_mask[labels].min() == False:  # noqa: E712 - numpy bool array
            raise ConfigError("a sample's true class is masked out")
        work = np.where(class_mask[None, :], logits, np.asarray(-1e30, dtype=logits.dtype))
    if sample_weights is None:
        sample_weights = np.full(n, 1.0 / n, dtype=logits.dtype)
    shifted = work - work.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + work.max(axis=1)
    per_sample = lse - work[np.arange(n), labels]
    p = softmax(work, axis=1)
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= sample_weights[:, None]
    loss = float((per_sample * sample_weights).sum())
    return loss, dlogits.astype(logits.dtype), per_sample


# ---------------------------------------------------------------------------
# Optimizer


class AdamW:
    """Adam with decoupled weight decay; updates parameter arrays in place."""

    def __init__(
        self,
        params,
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(v) for name, v, _ in self.params}
        self._v = {name: np.zeros_like(v) for name, v, _ in self.params}

    def zero_grad(self) -> None:
        for _, _, g in self.params:
            g[...] = 0.0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name, value, grad in self.params:
            m = self._m[name]
            v = self._v[name]
            m *= self.b1
            m += (1.0 - self.b1) * grad
            v *= self.b2
            v += (1.0 - self.b2) * grad * grad
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            value -= np.asarray(lr * (update + self.weight_decay * value), dtype=value.dtype)
