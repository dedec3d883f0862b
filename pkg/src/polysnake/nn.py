"""Differentiable layer primitives: conv2d, maxpool2d, bilinear resize, batchnorm.

Forward math lives in dtype-generic pure functions (``*_forward``) that
compute in whatever float dtype they are given; the autodiff wrappers call
them with float32 and attach closures. Tests reuse the pure functions in
float64 to build finite-difference oracles with a low noise floor.

Convolution is cross-correlation (no kernel flip). It is lowered to a
single matrix multiply per batch via an im2col patch matrix; the backward
pass scatters back with one strided slice-add per kernel tap, which keeps
everything inside BLAS and vectorized numpy.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .tensor import Tensor, _record


# -- convolution ---------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Patches of a padded (n,c,H,W) array as (n, c*kh*kw, out_h*out_w)."""
    n, c, H, W = xp.shape
    oh = (H - kh) // stride + 1
    ow = (W - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, c, oh, ow, kh, kw)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, padding: int,
                   return_cols: bool = False):
    """Cross-correlation on a (n,c,h,w) array; dtype follows the inputs."""
    n, c, h, wd = x.shape
    c_out, c_in, kh, kw = w.shape
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    w2 = w.reshape(c_out, c_in * kh * kw)
    out = np.matmul(w2, cols)  # (n, c_out, oh*ow) via broadcast
    out += b.reshape(1, c_out, 1)
    out = out.reshape(n, c_out, oh, ow)
    if return_cols:
        return out, cols
    return out


def _col2im(gcols: np.ndarray, x_shape: Tuple[int, ...], kh: int, kw: int,
            stride: int, padding: int) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add patch gradients back onto x."""
    n, c, h, w = x_shape
    H, W = h + 2 * padding, w + 2 * padding
    oh = (H - kh) // stride + 1
    ow = (W - kw) // stride + 1
    g6 = gcols.reshape(n, c, kh, kw, oh, ow)
    gxp = np.zeros((n, c, H, W), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += g6[:, :, i, j]
    if padding:
        return gxp[:, :, padding:-padding, padding:-padding]
    return gxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation over a (c,h,w) or (n,c,h,w) tensor.

    Gradient flows to the input, the weight and the bias. The kernel must
    be odd-sized; input channels must match the weight's second axis.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d: expected 3D or 4D input, got shape {x.shape}")
    c_out, c_in, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
    if xd.shape[1] != c_in:
        raise ValueError(
            f"conv2d: input has {xd.shape[1]} channels (shape {tuple(xd.shape)}) "
            f"but weight expects {c_in} (shape {tuple(weight.shape)})")
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")

    out, cols = conv2d_forward(xd, weight.data, bias.data, stride, padding,
                               return_cols=True)
    x_shape = xd.shape
    w2 = weight.data.reshape(c_out, -1)

    def grad_fn(g):
        g4 = g[None] if squeeze else g
        n = g4.shape[0]
        g2 = g4.reshape(n, c_out, -1)
        gb = g2.sum(axis=(0, 2))
        # batched GEMM beats einsum here by a wide margin on large maps
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gcols = np.matmul(w2.T, g2)
        gx = _col2im(gcols, x_shape, kh, kw, stride, padding)
        if squeeze:
            gx = gx[0]
        return gx.astype(np.float32), gw.astype(np.float32), gb.astype(np.float32)

    return _record(out[0] if squeeze else out, (x, weight, bias), grad_fn)


# -- max pooling ---------------------------------------------------------------


def maxpool2d_forward(x: np.ndarray, window: int):
    """Window max over (n,c,h,w); also returns row-major argmax per window."""
    n, c, h, w = x.shape
    oh, ow = h // window, w // window
    win = (x.reshape(n, c, oh, window, ow, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, oh, ow, window * window))
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping window max; ties route the gradient to the first
    position in row-major order within the window."""
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    if h % window or w % window:
        raise ValueError(f"maxpool2d: spatial dims {h}x{w} not divisible by window {window}")
    out, idx = maxpool2d_forward(xd, window)
    oh, ow = h // window, w // window

    def grad_fn(g):
        g4 = g[None] if squeeze else g
        gwin = np.zeros((n, c, oh, ow, window * window), dtype=np.float32)
        np.put_along_axis(gwin, idx[..., None], g4[..., None], axis=-1)
        gx = (gwin.reshape(n, c, oh, ow, window, window)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h, w))
        return ((gx[0] if squeeze else gx),)

    return _record(out[0] if squeeze else out, (x,), grad_fn)


# -- bilinear resize -------------------------------------------------------------


_RESIZE_CACHE: dict = {}


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Align-corners 1D interpolation matrix W with out = W @ x."""
    key = (n_in, n_out)
    m = _RESIZE_CACHE.get(key)
    if m is None:
        m = np.zeros((n_out, n_in), dtype=np.float64)
        if n_in == 1 or n_out == 1:
            m[:, 0] = 1.0
        else:
            scale = (n_in - 1) / (n_out - 1)
            for i in range(n_out):
                src = i * scale
                i0 = min(int(np.floor(src)), n_in - 2)
                t = src - i0
                m[i, i0] += 1.0 - t
                m[i, i0 + 1] += t
        _RESIZE_CACHE[key] = m
    return m.astype(dtype, copy=False)


def bilinear_resize_forward(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of (n,c,h,w); dtype follows input."""
    h, w = x.shape[-2:]
    wr = resize_matrix(h, out_h, x.dtype)
    wc = resize_matrix(w, out_w, x.dtype)
    t = np.matmul(x, wc.T)
    return np.matmul(wr, t)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize spatial dims with align-corners bilinear interpolation."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output dims must be >= 1, got {out_h}x{out_w}")
    if x.ndim not in (3, 4):
        raise ValueError(f"bilinear_resize: expected 3D or 4D input, got shape {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    out = bilinear_resize_forward(x.data, out_h, out_w).astype(np.float32)
    wr = resize_matrix(h, out_h, np.float32)
    wc = resize_matrix(w, out_w, np.float32)

    def grad_fn(g):
        gx = np.matmul(wr.T, np.matmul(g, wc))
        return (gx,)

    return _record(out, (x,), grad_fn)


# -- batch normalization -----------------------------------------------------------


class BNStats:
    """Running mean/variance for one batchnorm layer (eval-mode statistics)."""

    __slots__ = ("mean", "var", "momentum", "eps")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(channels, dtype=np.float32)
        self.var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps


def batchnorm2d_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                        mean: np.ndarray, var: np.ndarray, eps: float) -> np.ndarray:
    """Normalize (n,c,h,w) with the given per-channel statistics."""
    inv = 1.0 / np.sqrt(var + eps)
    shape = (1, -1, 1, 1)
    return (x - mean.reshape(shape)) * (gamma * inv).reshape(shape) + beta.reshape(shape)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, stats: BNStats,
                mode: str) -> Tensor:
    """Per-channel batch normalization on a (n,c,h,w) tensor.

    Train mode normalizes by batch statistics and folds them into the
    running stats (momentum 0.1, unbiased variance for the running copy);
    eval mode normalizes by the running stats and touches nothing.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm2d: unknown mode {mode!r}")
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d: expected (n,c,h,w) input, got shape {x.shape}")
    n, c, h, w = x.shape
    if n == 0:
        raise ValueError("batchnorm2d: empty batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"batchnorm2d: gamma/beta shapes {gamma.shape}/{beta.shape} != ({c},)")

    xd = x.data
    if mode == "eval":
        out = batchnorm2d_forward(xd, gamma.data, beta.data,
                                  stats.mean, stats.var, stats.eps)
        inv = (1.0 / np.sqrt(stats.var + stats.eps)).astype(np.float32)
        xhat = (xd - stats.mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
        gscale = (gamma.data * inv).reshape(1, -1, 1, 1)

        def grad_fn_eval(g):
            gx = g * gscale
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
            gbeta = g.sum(axis=(0, 2, 3))
            return gx, ggamma, gbeta

        return _record(out.astype(np.float32), (x, gamma, beta), grad_fn_eval)

    cnt = n * h * w
    mu = xd.mean(axis=(0, 2, 3))
    var = xd.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + stats.eps)
    xhat = (xd - mu.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    out = gamma.data.reshape(1, -1, 1, 1) * xhat + beta.data.reshape(1, -1, 1, 1)

    m = stats.momentum
    var_unbiased = var * (cnt / (cnt - 1)) if cnt > 1 else var
    stats.mean = ((1 - m) * stats.mean + m * mu).astype(np.float32)
    stats.var = ((1 - m) * stats.var + m * var_unbiased).astype(np.float32)

    gd = gamma.data.reshape(1, -1, 1, 1)
    inv4 = inv.reshape(1, -1, 1, 1).astype(np.float32)

    def grad_fn(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gd
        s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gx = inv4 * (gxhat - (s1 + xhat * s2) / cnt)
        return (gx.astype(np.float32), ggamma.astype(np.float32),
                gbeta.astype(np.float32))

    return _record(out.astype(np.float32), (x, gamma, beta), grad_fn)
