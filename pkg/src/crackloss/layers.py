"""Neural-network layer primitives with explicit forward and backward passes.

Thin shape-checked wrappers over the kernel backend. Conventions:

    - arrays are NCHW float64
    - convolutions are cross-correlations with zero same-padding
    - max pooling is 2x2 stride 2, ties routed to the first (row-major)
      maximal element of each window
    - the deconvolution is a 2x2 stride-2 transposed convolution, doubling
      both spatial dims
    - relu'(0) = 0 (strict x > 0 pass-through)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numkit import Tensor


@dataclass(frozen=True)
class LayerParams:
    """One layer's weights: kernels (out, in, kh, kw) and biases (out,)."""

    kernels: Tensor
    biases: Tensor

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if k.ndim != 4:
            raise ValueError(f"kernels: must be rank 4 (out, in, kh, kw), got rank {k.ndim}")
        if b.ndim != 1 or b.shape[0] != k.shape[0]:
            raise ValueError(f"biases: shape {b.shape} does not match {k.shape[0]} output channels")
        if not np.all(np.isfinite(k)) or not np.all(np.isfinite(b)):
            raise ValueError("kernels, biases: must be finite")
        object.__setattr__(self, "kernels", np.ascontiguousarray(k))
        object.__setattr__(self, "biases", np.ascontiguousarray(b))


def conv2d_forward(x: Tensor, params: LayerParams) -> Tensor:
    return kernels.conv3x3_forward(x, params.kernels, params.biases)


def conv2d_backward(x: Tensor, params: LayerParams, gout: Tensor):
    """Returns (grad_input, grad_kernels, grad_biases)."""
    return kernels.conv3x3_backward(x, params.kernels, gout)


def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: Tensor, gout: Tensor) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    gout = np.asarray(gout, dtype=np.float64)
    if x.shape != gout.shape:
        raise ValueError(f"relu_backward: shape mismatch input {x.shape} vs grad {gout.shape}")
    return np.where(x > 0.0, gout, 0.0)


def maxpool2x2_forward(x: Tensor):
    """Returns (pooled, argmax_index) where the index is the 0..3 row-major
    position of the max inside each 2x2 window."""
    return kernels.pool2x2_forward(x)


def maxpool2x2_backward(idx: Tensor, gout: Tensor) -> Tensor:
    return kernels.pool2x2_backward(idx, gout)


def deconv2x2s2_forward(x: Tensor, params: LayerParams) -> Tensor:
    return kernels.deconv2x2_forward(x, params.kernels, params.biases)


def deconv2x2s2_backward(x: Tensor, params: LayerParams, gout: Tensor):
    """Returns (grad_input, grad_kernels, grad_biases)."""
    return kernels.deconv2x2_backward(x, params.kernels, gout)


def concat_forward(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_forward: incompatible shapes {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_backward(gout: Tensor, first_channels: int):
    """Splits the gradient back into the two concatenated inputs."""
    gout = np.asarray(gout, dtype=np.float64)
    if not 0 < first_channels < gout.shape[1]:
        raise ValueError(f"concat_backward: first_channels {first_channels} outside "
                         f"(0, {gout.shape[1]})")
    return (np.ascontiguousarray(gout[:, :first_channels]),
            np.ascontiguousarray(gout[:, first_channels:]))
