"""NHWC layer primitives with explicit backward passes.

Every forward returns ``(output, cache)``; the matching backward consumes the
cache. Tensors are ``(N, H, W, C)``; 3x3 kernels are ``(3, 3, C_in, C_out)``.
"""

from __future__ import annotations

import numpy as np

from .raster import resize_matrix


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """Zero-padded 3x3 convolution (cross-correlation).

    Two equivalent lowerings: im2col over the input, or a per-tap product
    ``x @ W`` that is shifted and summed. The second touches ``9 * C_out``
    values per pixel instead of ``9 * C_in``, so it wins for stride-1
    layers that reduce channels.
    """
    n, h, wd, c = x.shape
    o = w.shape[3]
    if h % stride or wd % stride:
        raise ValueError(f"spatial size {h}x{wd} not divisible by stride {stride}")
    if stride == 1 and o < c:
        out, cache = _conv_taps_fwd(x, w)
    else:
        out, cache = _conv_cols_fwd(x, w, stride)
    out += b
    return out, cache


def conv3x3_backward(g: np.ndarray, cache, need_dx: bool = True):
    kind = cache[0]
    if kind == "taps":
        dx, dw = _conv_taps_bwd(g, cache, need_dx)
    else:
        dx, dw = _conv_cols_bwd(g, cache, need_dx)
    return dx, dw, g.sum(axis=(0, 1, 2))


def _conv_cols_fwd(x, w, stride):
    n, h, wd, c = x.shape
    ho, wo = h // stride, wd // stride
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, ho, wo, 3, 3, c), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j, :] = xp[:, i : i + h : stride, j : j + wd : stride, :]
    cols = cols.reshape(n * ho * wo, 9 * c)
    out = (cols @ w.reshape(9 * c, -1)).reshape(n, ho, wo, -1)
    return out, ("cols", cols, w, x.shape, stride)


def _conv_cols_bwd(g, cache, need_dx=True):
    _, cols, w, (n, h, wd, c), stride = cache
    o = w.shape[3]
    g2 = g.reshape(-1, o)
    dw = (cols.T @ g2).reshape(w.shape)
    if not need_dx:
        return None, dw
    dcols = (g2 @ w.reshape(9 * c, o).T).reshape(n, h // stride, wd // stride, 3, 3, c)
    dxp = np.zeros((n, h + 2, wd + 2, c), dtype=g.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + h : stride, j : j + wd : stride, :] += dcols[:, :, :, i, j, :]
    return dxp[:, 1:-1, 1:-1, :], dw


def _conv_taps_fwd(x, w):
    n, h, wd, c = x.shape
    o = w.shape[3]
    wt = w.transpose(2, 0, 1, 3).reshape(c, 9 * o)
    y = (x.reshape(-1, c) @ wt).reshape(n, h, wd, 3, 3, o)
    yp = np.pad(y, ((0, 0), (1, 1), (1, 1), (0, 0), (0, 0), (0, 0)))
    out = np.zeros((n, h, wd, o), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            out += yp[:, i : i + h, j : j + wd, i, j, :]
    return out, ("taps", x, wt, w.shape)


def _conv_taps_bwd(g, cache, need_dx=True):
    _, x, wt, wshape = cache
    n, h, wd, c = x.shape
    o = wshape[3]
    gp = np.pad(g, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dy = np.empty((n, h, wd, 3, 3, o), dtype=g.dtype)
    for i in range(3):
        for j in range(3):
            dy[:, :, :, i, j, :] = gp[:, 2 - i : 2 - i + h, 2 - j : 2 - j + wd, :]
    dy = dy.reshape(-1, 9 * o)
    dx = (dy @ wt.T).reshape(n, h, wd, c) if need_dx else None
    dw = (x.reshape(-1, c).T @ dy).reshape(c, 3, 3, o).transpose(1, 2, 0, 3)
    return dx, np.ascontiguousarray(dw)


def conv1x1(x, w, b):
    n, h, wd, c = x.shape
    out = (x.reshape(-1, c) @ w).reshape(n, h, wd, -1) + b
    return out, x


def conv1x1_backward(g, x, w):
    n, h, wd, c = x.shape
    o = g.shape[3]
    g2 = g.reshape(-1, o)
    dw = x.reshape(-1, c).T @ g2
    dx = (g2 @ w.T).reshape(n, h, wd, c)
    return dx, dw, g2.sum(axis=0)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(g, y):
    return g * (y > 0)


def sigmoid(x):
    # split by sign to stay finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def resize_nhwc(x, h_out: int, w_out: int):
    """Bilinear resize of the spatial axes; channels ride along."""
    n, h, w, c = x.shape
    mh = resize_matrix(h, h_out, x.dtype)
    mw = resize_matrix(w, w_out, x.dtype)
    t = mh @ x.reshape(n, h, w * c)
    t = mw @ t.reshape(n * h_out, w, c)
    return t.reshape(n, h_out, w_out, c)


def resize_nhwc_backward(g, in_hw: tuple[int, int]):
    n, h_out, w_out, c = g.shape
    h, w = in_hw
    mh = resize_matrix(h, h_out, g.dtype)
    mw = resize_matrix(w, w_out, g.dtype)
    t = mw.T @ g.reshape(n * h_out, w_out, c)
    t = mh.T @ t.reshape(n, h_out, w * c)
    return t.reshape(n, h, w, c)
