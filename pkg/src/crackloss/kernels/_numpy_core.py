"""Pure-numpy implementations of the hot array kernels.

Serves both as the fallback when the compiled extension is unavailable and
as the reference the extension is tested against. All arrays are NCHW
float64. Convolutions are cross-correlations with zero same-padding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _as64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv3x3_forward(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation. Accepts any odd kernel size; the name
    reflects the only size the network uses."""
    x, k, b = _as64(x), _as64(k), _as64(b)
    n, c, h, w = x.shape
    o, ci, kh, kw = k.shape
    if ci != c:
        raise ValueError(f"conv3x3_forward: input has {c} channels, kernel expects {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv3x3_forward: kernel dims must be odd, got {kh}x{kw}")
    if b.shape != (o,):
        raise ValueError(f"conv3x3_forward: bias shape {b.shape} does not match {o} outputs")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.einsum("nchwij,ocij->nohw", win, k, optimize=True)
    out += b[None, :, None, None]
    return out


def conv3x3_backward(x: np.ndarray, k: np.ndarray, gout: np.ndarray):
    x, k, gout = _as64(x), _as64(k), _as64(gout)
    n, c, h, w = x.shape
    o, ci, kh, kw = k.shape
    if gout.shape != (n, o, h, w):
        raise ValueError(f"conv3x3_backward: grad shape {gout.shape}, expected {(n, o, h, w)}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    gk = np.einsum("nchwij,nohw->ocij", win, gout, optimize=True)
    gb = gout.sum(axis=(0, 2, 3))
    gp = np.pad(gout, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
    kflip = k[:, :, ::-1, ::-1]
    gx = np.einsum("nohwij,ocij->nchw", gwin, kflip, optimize=True)
    return gx, gk, gb


def pool2x2_forward(x: np.ndarray):
    """2x2 stride-2 max pooling. Returns the pooled map and the row-major
    in-window index (0..3) of each max, ties toward the first occurrence."""
    x = _as64(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"pool2x2_forward: spatial dims must be even, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(flat, axis=-1).astype(np.uint8)
    out = np.take_along_axis(flat, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def pool2x2_backward(idx: np.ndarray, gout: np.ndarray) -> np.ndarray:
    gout = _as64(gout)
    n, c, hh, ww = gout.shape
    if idx.shape != (n, c, hh, ww):
        raise ValueError(f"pool2x2_backward: index shape {idx.shape}, expected {(n, c, hh, ww)}")
    scatter = np.zeros((n, c, hh, ww, 4), dtype=np.float64)
    np.put_along_axis(scatter, idx[..., None].astype(np.intp), gout[..., None], axis=-1)
    gx = scatter.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(gx.reshape(n, c, 2 * hh, 2 * ww))


def deconv2x2_forward(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Transposed convolution, 2x2 kernel, stride 2: each input pixel paints
    one non-overlapping 2x2 output block."""
    x, k, b = _as64(x), _as64(k), _as64(b)
    n, c, h, w = x.shape
    o, ci, kh, kw = k.shape
    if (kh, kw) != (2, 2):
        raise ValueError(f"deconv2x2_forward: kernel must be 2x2, got {kh}x{kw}")
    if ci != c:
        raise ValueError(f"deconv2x2_forward: input has {c} channels, kernel expects {ci}")
    if b.shape != (o,):
        raise ValueError(f"deconv2x2_forward: bias shape {b.shape} does not match {o} outputs")
    blocks = np.einsum("nchw,ocij->nohwij", x, k, optimize=True)
    out = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, o, 2 * h, 2 * w)
    out = np.ascontiguousarray(out)
    out += b[None, :, None, None]
    return out


def deconv2x2_backward(x: np.ndarray, k: np.ndarray, gout: np.ndarray):
    x, k, gout = _as64(x), _as64(k), _as64(gout)
    n, c, h, w = x.shape
    o = k.shape[0]
    if gout.shape != (n, o, 2 * h, 2 * w):
        raise ValueError(f"deconv2x2_backward: grad shape {gout.shape}, expected {(n, o, 2 * h, 2 * w)}")
    blocks = gout.reshape(n, o, h, 2, w, 2).transpose(0, 1, 2, 4, 3, 5)
    gk = np.einsum("nchw,nohwij->ocij", x, blocks, optimize=True)
    gb = gout.sum(axis=(0, 2, 3))
    gx = np.einsum("nohwij,ocij->nchw", blocks, k, optimize=True)
    return np.ascontiguousarray(gx), gk, gb
