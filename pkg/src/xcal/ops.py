"""Float32 compute kernels used to execute model graphs.

Tensors are plain ``numpy.ndarray`` objects in NCHW (or N x F) layout.
Every kernel is a pure function of its inputs. Batched kernels evaluate
each sample with identically-shaped BLAS calls, so a sample's result does
not depend on which batch it travels in.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

F32 = np.float32


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _out_size(size: int, k: int, s: int, p: int, what: str) -> int:
    span = size + 2 * p - k
    if s < 1:
        raise ShapeError(f"{what}: stride must be >= 1, got {s}")
    if span < 0:
        raise ShapeError(f"{what}: kernel {k} larger than padded input {size + 2 * p}")
    if span % s:
        raise ShapeError(
            f"{what}: non-integral output size ({size} + 2*{p} - {k}) / {s} + 1"
        )
    return span // s + 1


def conv2d(x, weight, bias=None, stride=(1, 1), padding=(0, 0)) -> np.ndarray:
    """2-D cross-correlation with zero padding, groups fixed to 1.

    ``x`` is N x I x H x W, ``weight`` is O x I x Kh x Kw.
    """
    x = np.asarray(x, dtype=F32)
    weight = np.asarray(weight, dtype=F32)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {i}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oh = _out_size(h, kh, sh, ph, "conv2d")
    ow = _out_size(w, kw, sw, pw, "conv2d")
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    # (N, C, OH, OW, Kh, Kw) -> (N, C*Kh*Kw, OH*OW)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    out = np.matmul(weight.reshape(o, -1), cols).reshape(n, o, oh, ow)
    if bias is not None:
        bias = np.asarray(bias, dtype=F32)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out += bias[None, :, None, None]
    return out


def linear(x, weight, bias=None) -> np.ndarray:
    """``x @ weight.T + bias`` for x of shape N x F and weight O x F."""
    x = np.asarray(x, dtype=F32)
    weight = np.asarray(weight, dtype=F32)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    out = np.matmul(weight, x[:, :, None])[:, :, 0]
    if bias is not None:
        bias = np.asarray(bias, dtype=F32)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out += bias
    return out


def _per_channel(v, c: int, ndim: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=F32)
    if v.shape != (c,):
        raise ShapeError(f"batchnorm: {name} has shape {v.shape}, expected ({c},)")
    return v.reshape((1, c) + (1,) * (ndim - 2))


def batchnorm_apply(x, mean, var, gamma, beta, eps: float) -> np.ndarray:
    """Inference-mode batch normalization over channel axis 1 (NCHW or N x C)."""
    x = np.asarray(x, dtype=F32)
    if x.ndim < 2:
        raise ShapeError(f"batchnorm expects at least 2-D input, got {x.shape}")
    c = x.shape[1]
    mean, var, gamma, beta = (
        _per_channel(v, c, x.ndim, name)
        for v, name in ((mean, "mean"), (var, "var"), (gamma, "gamma"), (beta, "beta"))
    )
    return (gamma * ((x - mean) / np.sqrt(var + F32(eps))) + beta).astype(F32, copy=False)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=F32), F32(0))


def maxpool2d(x, kernel=(2, 2), stride=None) -> np.ndarray:
    x = np.asarray(x, dtype=F32)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got {x.shape}")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    _out_size(x.shape[2], kh, sh, 0, "maxpool2d")
    _out_size(x.shape[3], kw, sw, 0, "maxpool2d")
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return win.max(axis=(4, 5))


def global_avgpool(x) -> np.ndarray:
    """Spatial mean per channel: N x C x H x W -> N x C."""
    x = np.asarray(x, dtype=F32)
    if x.ndim != 4:
        raise ShapeError(f"global_avgpool expects NCHW input, got {x.shape}")
    return x.mean(axis=(2, 3), dtype=F32)


def add(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=F32)
    b = np.asarray(b, dtype=F32)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    return a + b


def flatten(x) -> np.ndarray:
    x = np.asarray(x, dtype=F32)
    return x.reshape(x.shape[0], -1)


def _interp_axis(in_size: int, out_size: int):
    dst = np.arange(out_size, dtype=np.float64)
    src = (dst + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel source coordinates, edge-clamped."""
    x = np.asarray(x, dtype=F32)
    if x.ndim != 4:
        raise ShapeError(f"resize_bilinear expects NCHW input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: output size must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x.copy()
    y = x.astype(np.float64)
    lo, hi, f = _interp_axis(h, out_h)
    f = f[:, None]
    y = y[:, :, lo, :] * (1.0 - f) + y[:, :, hi, :] * f
    lo, hi, f = _interp_axis(w, out_w)
    y = y[..., lo] * (1.0 - f) + y[..., hi] * f
    return y.astype(F32)
