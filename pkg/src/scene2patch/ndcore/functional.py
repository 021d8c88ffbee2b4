"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value with numpy and, when a tape is active,
records a closure returning the gradient for each input.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .tensor import Tensor, make_result


class DimensionError(ValueError):
    pass


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[b,Cin,H,W]`` with ``weight[Cout,Cin,K,K]``."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {x.shape} (padding={padding})")

    # channels-last im2col: rows are output positions, columns are (kh, kw, Cin)
    xn = x.data.transpose(0, 2, 3, 1)
    if padding:
        xn = np.pad(xn, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xn = np.ascontiguousarray(xn)
    ho = (h - kh + 2 * padding) // stride + 1
    wo = (w - kw + 2 * padding) // stride + 1
    win = sliding_window_view(xn, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * ho * wo, kh * kw * cin)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    # logical NCHW view over channels-last memory
    out = out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        dw = None
        if weight.requires_grad:
            dw = (g2.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        db = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(b, ho, wo, kh, kw, cin)
            dxn = _kernels.col2im_nhwc(dcols, stride, xn.shape[1], xn.shape[2])
            if padding:
                dxn = dxn[:, padding:padding + h, padding:padding + w, :]
            dx = dxn.transpose(0, 3, 1, 2)
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, backward)


def conv_transpose2d_k2s2(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Transposed convolution with kernel 2, stride 2 (learned 2x upsampling).

    ``weight`` has shape ``[Cin, Cout, 2, 2]``.
    """
    b, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if cin != wcin or (kh, kw) != (2, 2):
        raise DimensionError(f"conv_transpose2d mismatch: input {x.shape} vs weight {weight.shape}")
    # out[b,o,2i+p,2j+q] = sum_c x[b,c,i,j] * W[c,o,p,q]
    t = np.einsum("bchw,copq->bohpwq", x.data, weight.data, optimize=True)
    out = t.reshape(b, cout, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g6 = g.reshape(b, cout, h, 2, w, 2)
        dx = np.einsum("bohpwq,copq->bchw", g6, weight.data, optimize=True) if x.requires_grad else None
        dw = np.einsum("bohpwq,bchw->copq", g6, x.data, optimize=True) if weight.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, backward)


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    """Max pooling; backward routes to the first maximum in row-major window order."""
    stride = kernel if stride is None else stride
    b, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise DimensionError(f"pool kernel {kernel} larger than spatial extent of {x.shape}")
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1

    out, idx = _kernels.maxpool_forward(x.data, kernel, stride, ho, wo)

    def backward(g):
        return (_kernels.maxpool_backward(np.ascontiguousarray(g), idx, kernel, stride, h, w),)

    return make_result(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``out[i,j] = sum_n x[i,n] * weight[j,n] + bias[j]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data

    def backward(g):
        dx = g @ weight.data if x.requires_grad else None
        dw = g.T @ x.data if weight.requires_grad else None
        db = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return make_result(out, (x,), lambda g: (np.where(out > 0, g, 0.0),))


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity in evaluation mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    orig = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make_result(out, tuple(tensors), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, factor: float) -> Tensor:
    return make_result(x.data * factor, (x,), lambda g: (g * factor,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def global_avg_pool(x: Tensor) -> Tensor:
    """``[b,C,H,W] -> [b,C]`` spatial mean."""
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return make_result(out, (x,), backward)


def mean_over_instances(patch_preds: Tensor) -> Tensor:
    """``[k,C] -> [C]`` mean over instance rows (MIL mean aggregation)."""
    if patch_preds.data.ndim != 2:
        raise DimensionError(f"expected [k, C] instance predictions, got {patch_preds.shape}")
    k = patch_preds.shape[0]
    if k == 0:
        raise ValueError("cannot aggregate an empty bag (k = 0)")
    out = patch_preds.data.mean(axis=0)

    def backward(g):
        return (np.broadcast_to(g / k, patch_preds.shape).copy(),)

    return make_result(out, (patch_preds,), backward)


def rmse_loss(pred: Tensor, target) -> Tensor:
    """``sqrt(mean((pred - target)**2))``; gradient taken as zero at a perfect fit."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"rmse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    value = np.sqrt(np.mean(diff * diff))

    def backward(g):
        if value == 0.0:
            return (np.zeros_like(diff),)
        return (g * diff / (diff.size * value),)

    return make_result(np.array(value), (pred,), backward)


def interp_matrix(n_in: int, n_out: int, align_corners: bool = False) -> np.ndarray:
    """Row-stochastic 1-D linear interpolation matrix of shape ``(n_out, n_in)``."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    dst = np.arange(n_out, dtype=np.float64)
    if align_corners:
        src = dst * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    else:
        src = (dst + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, None)
    lo = np.minimum(np.floor(src).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int, align_corners: bool = True) -> Tensor:
    """Fixed (non-learned) bilinear resize of ``[b,C,H,W]``."""
    b, c, h, w = x.shape
    rh = interp_matrix(h, out_h, align_corners)
    rw = interp_matrix(w, out_w, align_corners)
    out = np.einsum("ph,bchw,qw->bcpq", rh, x.data, rw, optimize=True)

    def backward(g):
        return (np.einsum("ph,bcpq,qw->bchw", rh, g, rw, optimize=True),)

    return make_result(out, (x,), backward)
