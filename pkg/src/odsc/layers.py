"""Dense NCHW layer operations with hand-written adjoints.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes that cache plus the upstream gradient.  Arrays are float64 numpy arrays
of shape (batch, channels, height, width).
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "adaptive_maxpool_forward",
    "adaptive_maxpool_backward",
    "interp_matrix",
    "resize_bilinear",
    "resize_bilinear_backward",
    "upsample_bilinear2",
    "upsample_bilinear2_backward",
    "relu_forward",
    "relu_backward",
]


def _check4(x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D (N, C, H, W) array, got shape {x.shape}")


# --------------------------------------------------------------------------- conv

def conv2d_forward(x, weight, bias):
    """'Same' zero-padded 2-D convolution (cross-correlation).

    Parameters
    ----------
    x : ndarray, shape (N, Cin, H, W)
    weight : ndarray, shape (k, k, Cin, Cout), k odd
    bias : ndarray, shape (Cout,)

    Returns
    -------
    out : ndarray, shape (N, Cout, H, W)
    cache : tuple
    """
    _check4(x)
    k, k2, cin, cout = weight.shape
    if k != k2:
        raise ConfigError(f"kernel must be square, got {k}x{k2}")
    if k % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {k}")
    if x.shape[1] != cin:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match Cout={cout}")
    n, _, h, w = x.shape
    p = (k - 1) // 2
    xp = np.zeros((n, h + 2 * p, w + 2 * p, cin))
    xp[:, p:p + h, p:p + w, :] = x.transpose(0, 2, 3, 1)
    if 4 * cin <= cout:
        # few input channels: one im2col GEMM beats k*k thin matmuls
        cols = np.empty((n, h, w, k, k, cin))
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
        out = (cols.reshape(-1, k * k * cin) @ weight.reshape(-1, cout)).reshape(n, h, w, cout)
    else:
        out = np.zeros((n, h, w, cout))
        # fixed (i, j) summation order keeps results bit-reproducible
        for i in range(k):
            for j in range(k):
                out += xp[:, i:i + h, j:j + w, :] @ weight[i, j]
    out += bias
    return out.transpose(0, 3, 1, 2).copy(), (xp, weight)


def conv2d_backward(cache, grad_out):
    """Gradients w.r.t. input, weight and bias of :func:`conv2d_forward`."""
    xp, weight = cache
    k = weight.shape[0]
    p = (k - 1) // 2
    n, hp, wp, cin = xp.shape
    h, w = hp - 2 * p, wp - 2 * p
    g = grad_out.transpose(0, 2, 3, 1)
    gflat = g.reshape(-1, g.shape[-1])
    dweight = np.empty_like(weight)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + h, j:j + w, :].reshape(-1, cin)
            dweight[i, j] = patch.T @ gflat
            dxp[:, i:i + h, j:j + w, :] += g @ weight[i, j].T
    dbias = gflat.sum(axis=0)
    dx = dxp[:, p:p + h, p:p + w, :].transpose(0, 3, 1, 2).copy()
    return dx, dweight, dbias


# ------------------------------------------------------------------------ pooling

def maxpool2_forward(x):
    """2x2 stride-2 max pooling in ceil mode.

    Odd trailing rows/columns are padded with -inf so the last window covers
    a single row/column.  Ties resolve to the first position in row-major
    window order.
    """
    _check4(x)
    n, c, h, w = x.shape
    ho, wo = -(-h // 2), -(-w // 2)
    xp = np.full((n, c, 2 * ho, 2 * wo), -np.inf)
    xp[:, :, :h, :w] = x
    win = xp.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool2_backward(cache, grad_out):
    arg, shape = cache
    n, c, h, w = shape
    ho, wo = arg.shape[2:]
    win = np.zeros((n, c, ho, wo, 4))
    np.put_along_axis(win, arg[..., None], grad_out[..., None], axis=-1)
    full = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    return full[:, :, :h, :w].copy()


def _adaptive_edges(size_in: int, size_out: int) -> list[int]:
    # round half up, so edges do not depend on banker's rounding
    return [int(math.floor(j * size_in / size_out + 0.5)) for j in range(size_out + 1)]


def _block_maxpool(x, fh: int, fw: int):
    # equal windows: same result and argmax order as the general loop, vectorized
    n, c, h, w = x.shape
    oh, ow = h // fh, w // fw
    win = x.reshape(n, c, oh, fh, ow, fw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, fh * fw)
    i = win.argmax(axis=-1)
    out = np.take_along_axis(win, i[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * fh + i // fw
    cols = np.arange(ow)[None, :] * fw + i % fw
    return out, (rows * w + cols, x.shape)


def adaptive_maxpool_forward(x, out_h: int, out_w: int):
    """Max pooling onto a fixed output grid with non-overlapping windows.

    Window ``j`` along an axis spans ``[round(j*H/out_h), round((j+1)*H/out_h))``.
    """
    _check4(x)
    n, c, h, w = x.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"cannot adaptively pool {h}x{w} up to {out_h}x{out_w}")
    if h % out_h == 0 and w % out_w == 0:
        return _block_maxpool(x, h // out_h, w // out_w)
    eh, ew = _adaptive_edges(h, out_h), _adaptive_edges(w, out_w)
    out = np.empty((n, c, out_h, out_w))
    arg = np.empty((n, c, out_h, out_w), dtype=np.int64)
    for a in range(out_h):
        for b in range(out_w):
            block = x[:, :, eh[a]:eh[a + 1], ew[b]:ew[b + 1]]
            bw = block.shape[3]
            flat = block.reshape(n, c, -1)
            i = flat.argmax(axis=-1)
            out[:, :, a, b] = np.take_along_axis(flat, i[..., None], axis=-1)[..., 0]
            arg[:, :, a, b] = (eh[a] + i // bw) * w + ew[b] + i % bw
    return out, (arg, x.shape)


def adaptive_maxpool_backward(cache, grad_out):
    arg, shape = cache
    n, c, h, w = shape
    dx = np.zeros((n, c, h * w))
    # windows do not overlap, so each input position receives at most one value
    np.put_along_axis(dx, arg.reshape(n, c, -1), grad_out.reshape(n, c, -1), axis=-1)
    return dx.reshape(shape)


# ----------------------------------------------------------------------- bilinear

def interp_matrix(size_in: int, size_out: int) -> np.ndarray:
    """(size_out, size_in) linear interpolation matrix, align-corners=False.

    Output index ``i`` samples the input at ``(i + 0.5) * size_in / size_out - 0.5``
    clamped to ``[0, size_in - 1]``.
    """
    if size_out < 1 or size_in < 1:
        raise ConfigError(f"interpolation sizes must be >= 1, got {size_in} -> {size_out}")
    m = np.zeros((size_out, size_in))
    scale = size_in / size_out
    for i in range(size_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), size_in - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, size_in - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def resize_bilinear(x, out_h: int, out_w: int):
    """Bilinear resize of every map in ``x`` to ``out_h x out_w``; returns ``(out, cache)``."""
    _check4(x)
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"target size must be positive, got {out_h}x{out_w}")
    ah = interp_matrix(x.shape[2], out_h)
    aw = interp_matrix(x.shape[3], out_w)
    out = ah @ (x @ aw.T)
    return out, (ah, aw)


def resize_bilinear_backward(cache, grad_out):
    ah, aw = cache
    return ah.T @ (grad_out @ aw)


def upsample_bilinear2(x):
    return resize_bilinear(x, 2 * x.shape[2], 2 * x.shape[3])


upsample_bilinear2_backward = resize_bilinear_backward


# --------------------------------------------------------------------------- relu

def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(mask, grad_out):
    return np.where(mask, grad_out, 0.0)
