"""Layer primitives and losses used by the meta-learners."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericError, ShapeError
from .tensor import (
    Tensor,
    _note_kink,
    as_tensor,
    clamp_min,
    log,
    make_node,
    matmul,
    relu,
    sigmoid,
    softmax,
)
from . import tensor as _tensor

__all__ = [
    "dense_forward",
    "conv2d_forward",
    "maxpool2d",
    "crop_to_multiple",
    "relu",
    "sigmoid",
    "softmax",
    "cce_loss",
    "mse_loss",
    "CCE_EPS",
]

CCE_EPS = 1e-12


def dense_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (batch, in)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"dense expects x[batch,in], W[in,out], b[out]; got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"dense shapes do not conform: {x.shape}, {W.shape}, {b.shape}")
    return matmul(x, W) + b


def conv2d_forward(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation.

    ``x`` is (batch, ch, h, w), ``kernels`` is (n, ch, kh, kw); the output is
    (batch, n, (h - kh) / stride + 1, (w - kw) / stride + 1).
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 4 or kernels.ndim != 4 or bias.ndim != 1:
        raise ShapeError(f"conv2d expects 4-D input and kernels, 1-D bias; got {x.shape}, {kernels.shape}, {bias.shape}")
    if stride < 1 or int(stride) != stride:
        raise ShapeError(f"stride must be a positive integer, got {stride}")
    B, C, H, W = x.shape
    N, Ck, kh, kw = kernels.shape
    if Ck != C or bias.shape[0] != N:
        raise ShapeError(f"conv2d channel/bias mismatch: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    if kh > H or kw > W:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W}")
    if (H - kh) % stride or (W - kw) % stride:
        raise ShapeError(f"stride {stride} does not tile input {H}x{W} with kernel {kh}x{kw}")
    Ho, Wo = (H - kh) // stride + 1, (W - kw) // stride + 1

    # (B, C, Ho, Wo, kh, kw) view; no copy
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, kernels.data, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, N)
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]

    def bw(g):
        gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (N, C, kh, kw)
        gb = g.sum(axis=(0, 2, 3))
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += np.tensordot(
                    g, kernels.data[:, :, i, j], axes=([1], [0])
                ).transpose(0, 3, 1, 2)
        return gx, gk, gb

    return make_node(np.ascontiguousarray(out), (x, kernels, bias), bw, "conv2d")


def maxpool2d(x: Tensor, pool: tuple[int, int] = (2, 2)) -> Tensor:
    """Non-overlapping max pooling over the last two axes of (batch, ch, h, w).

    The gradient is routed to the first maximal element of each window in
    row-major scan order.
    """
    x = as_tensor(x)
    ph, pw = pool
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects (batch, ch, h, w), got {x.shape}")
    B, C, H, W = x.shape
    if ph < 1 or pw < 1 or H % ph or W % pw:
        raise ShapeError(f"spatial extents {H}x{W} not divisible by pool {ph}x{pw}")
    Ho, Wo = H // ph, W // pw
    win = (
        x.data.reshape(B, C, Ho, ph, Wo, pw)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, Ho, Wo, ph * pw)
    )
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if _tensor._kink_margins is not None and ph * pw > 1:
        top2 = np.sort(win, axis=-1)[..., -2:]
        _note_kink(np.min(top2[..., 1] - top2[..., 0]))

    def bw(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    return make_node(out, (x,), bw, "maxpool2d")


def crop_to_multiple(x: Tensor, pool: tuple[int, int]) -> Tensor:
    """Drop trailing rows/columns so the spatial extents divide by ``pool``."""
    H, W = x.shape[-2:]
    h, w = H - H % pool[0], W - W % pool[1]
    if (h, w) == (H, W):
        return x
    if h == 0 or w == 0:
        raise ShapeError(f"extent {H}x{W} smaller than pool {pool}")
    return x[..., :h, :w]


def cce_loss(pred: Tensor, target) -> Tensor:
    """Mean categorical cross-entropy of probability rows against one-hot targets.

    Probabilities are floored at ``CCE_EPS`` before the log.
    """
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.ndim != 2 or t.shape != pred.shape:
        raise ShapeError(f"cce_loss expects matching (batch, k) shapes, got {pred.shape} and {t.shape}")
    if np.any(pred.data < 0) or np.any(pred.data > 1 + 1e-9) or np.any(
        np.abs(pred.data.sum(axis=1) - 1.0) > 1e-6
    ):
        raise NumericError("cce_loss input rows are not probability distributions")
    if not (np.all((t == 0) | (t == 1)) and np.all(t.sum(axis=1) == 1)):
        raise ShapeError("cce_loss targets must be one-hot rows")
    picked = (pred * t).sum(axis=1)
    return -(log(clamp_min(picked, CCE_EPS))).mean()


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared element-wise differences."""
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {t.shape}")
    d = pred - t
    return (d * d).mean()
