"""Array-kernel backend selection.

Two interchangeable implementations of the hot kernels exist: a compiled
Cython extension (im2col + BLAS dgemm convolution) and a pure-numpy
fallback. The env var CRACKLOSS_KERNELS picks one:

    auto    use the extension if importable, else numpy (default)
    cython  require the extension, fail loudly if missing
    numpy   force the fallback

Both backends satisfy the same contracts and agree to floating-point
accumulation-order tolerance; each is individually deterministic.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy_core

_choice = os.environ.get("CRACKLOSS_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ImportError(f"CRACKLOSS_KERNELS must be auto, cython or numpy, got {_choice!r}")

_cy = None
if _choice in ("auto", "cython"):
    try:
        from . import _conv_cy as _cy
    except ImportError as exc:
        if _choice == "cython":
            raise ImportError(
                "CRACKLOSS_KERNELS=cython but the compiled extension is not "
                f"available: {exc}") from exc
        _cy = None

BACKEND = "cython" if _cy is not None else "numpy"


def backend_name() -> str:
    return BACKEND


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv3x3_forward(x, k, b):
    x, k, b = _c64(x), _c64(k), _c64(b)
    if _cy is not None and k.shape[2:] == (3, 3):
        return _cy.conv3x3_forward(x, k, b)
    return _numpy_core.conv3x3_forward(x, k, b)


def conv3x3_backward(x, k, gout):
    x, k, gout = _c64(x), _c64(k), _c64(gout)
    if _cy is not None and k.shape[2:] == (3, 3):
        return _cy.conv3x3_backward(x, k, gout)
    return _numpy_core.conv3x3_backward(x, k, gout)


def pool2x2_forward(x):
    x = _c64(x)
    if _cy is not None:
        return _cy.pool2x2_forward(x)
    return _numpy_core.pool2x2_forward(x)


def pool2x2_backward(idx, gout):
    idx = np.ascontiguousarray(idx, dtype=np.uint8)
    gout = _c64(gout)
    if _cy is not None:
        return _cy.pool2x2_backward(idx, gout)
    return _numpy_core.pool2x2_backward(idx, gout)


def deconv2x2_forward(x, k, b):
    x, k, b = _c64(x), _c64(k), _c64(b)
    if _cy is not None:
        return _cy.deconv2x2_forward(x, k, b)
    return _numpy_core.deconv2x2_forward(x, k, b)


def deconv2x2_backward(x, k, gout):
    x, k, gout = _c64(x), _c64(k), _c64(gout)
    if _cy is not None:
        return _cy.deconv2x2_backward(x, k, gout)
    return _numpy_core.deconv2x2_backward(x, k, gout)
