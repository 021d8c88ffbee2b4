"""Compiled loops for the memory-bound parts of pooling and convolution backward."""

import numba
import numpy as np


@numba.njit(cache=True)
def maxpool_forward(x, kernel, stride, ho, wo):
    b, c = x.shape[0], x.shape[1]
    out = np.empty((b, c, ho, wo))
    idx = np.empty((b, c, ho, wo), dtype=np.int32)
    for n in range(b):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    r0 = i * stride
                    c0 = j * stride
                    best = x[n, ch, r0, c0]
                    arg = 0
                    for t in range(kernel * kernel):
                        v = x[n, ch, r0 + t // kernel, c0 + t % kernel]
                        if v > best:
                            best = v
                            arg = t
                    out[n, ch, i, j] = best
                    idx[n, ch, i, j] = arg
    return out, idx


@numba.njit(cache=True)
def maxpool_backward(g, idx, kernel, stride, h, w):
    b, c, ho, wo = g.shape
    dx = np.zeros((b, c, h, w))
    for n in range(b):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    t = idx[n, ch, i, j]
                    dx[n, ch, i * stride + t // kernel, j * stride + t % kernel] += g[n, ch, i, j]
    return dx


@numba.njit(cache=True)
def col2im_nhwc(dcols, stride, hp, wp):
    """Scatter-add ``dcols[b, ho, wo, kh, kw, cin]`` into a ``[b, hp, wp, cin]`` buffer."""
    b, ho, wo, kh, kw, cin = dcols.shape
    dx = np.zeros((b, hp, wp, cin))
    for n in range(b):
        for i in range(ho):
            for j in range(wo):
                for p in range(kh):
                    for q in range(kw):
                        r = i * stride + p
                        s = j * stride + q
                        for ch in range(cin):
                            dx[n, r, s, ch] += dcols[n, i, j, p, q, ch]
    return dx
