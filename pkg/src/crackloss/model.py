"""Encoder-decoder segmentation network with explicit backprop and Adam.

The network is the classic U shape: repeated (conv3x3 + relu) x2 blocks,
2x2 max-pool downsampling, a bottleneck block, then 2x2 stride-2
deconvolution upsampling with skip concatenation from the matching encoder
stage, closed by a 3x3 conv head producing one logit channel. No
normalization or dropout layers. Input spatial dims must be divisible by
2^depth.

Parameter names, in forward order:

    enc{i}.conv1, enc{i}.conv2      i = 0 .. depth-1
    bott.conv1, bott.conv2
    up{i}, dec{i}.conv1, dec{i}.conv2   i = depth-1 .. 0
    head
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .layers import (LayerParams, concat_backward, concat_forward,
                     conv2d_backward, conv2d_forward, deconv2x2s2_backward,
                     deconv2x2s2_forward, maxpool2x2_backward,
                     maxpool2x2_forward, relu_backward, relu_forward)
from .numkit import SeededRng, Tensor

CHECKPOINT_MAGIC = b"CRKLCKP1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 2
    base_channels: int = 8
    input_channels: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth: must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels: must be >= 1, got {self.base_channels}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels: must be >= 1, got {self.input_channels}")


class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    def __init__(self, params: dict[str, LayerParams], beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"beta1, beta2: must be in [0, 1), got {beta1}, {beta2}")
        if epsilon <= 0.0:
            raise ValueError(f"epsilon: must be > 0, got {epsilon}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = {name: (np.zeros_like(p.kernels), np.zeros_like(p.biases))
                             for name, p in params.items()}
        self.second_moment = {name: (np.zeros_like(p.kernels), np.zeros_like(p.biases))
                              for name, p in params.items()}


def he_init(cfg: UNetConfig, rng: SeededRng) -> dict[str, LayerParams]:
    """Kernels ~ Normal(0, sqrt(2/fan_in)), biases zero, in forward order."""
    params: dict[str, LayerParams] = {}

    def conv(name: str, cin: int, cout: int, ksize: int):
        fan_in = cin * ksize * ksize
        std = float(np.sqrt(2.0 / fan_in))
        k = rng.normal((cout, cin, ksize, ksize), std=std)
        params[name] = LayerParams(kernels=k, biases=np.zeros(cout))

    ch = cfg.input_channels
    for i in range(cfg.depth):
        out = cfg.base_channels * (2 ** i)
        conv(f"enc{i}.conv1", ch, out, 3)
        conv(f"enc{i}.conv2", out, out, 3)
        ch = out
    bott = cfg.base_channels * (2 ** cfg.depth)
    conv("bott.conv1", ch, bott, 3)
    conv("bott.conv2", bott, bott, 3)
    ch = bott
    for i in reversed(range(cfg.depth)):
        out = cfg.base_channels * (2 ** i)
        conv(f"up{i}", ch, out, 2)
        conv(f"dec{i}.conv1", 2 * out, out, 3)
        conv(f"dec{i}.conv2", out, out, 3)
        ch = out
    conv("head", ch, 1, 3)
    return params


class UNet:
    """Holds parameters and the activation cache of the most recent forward."""

    def __init__(self, cfg: UNetConfig, params: dict[str, LayerParams] | None = None,
                 rng: SeededRng | None = None):
        self.cfg = cfg
        if params is None:
            params = he_init(cfg, rng if rng is not None else SeededRng(0))
        self.params = params
        self._cache: dict | None = None

    def _double_conv(self, x: Tensor, name: str, cache: dict) -> Tensor:
        z1 = conv2d_forward(x, self.params[f"{name}.conv1"])
        a1 = relu_forward(z1)
        z2 = conv2d_forward(a1, self.params[f"{name}.conv2"])
        a2 = relu_forward(z2)
        cache[name] = (x, z1, a1, z2)
        return a2

    def _double_conv_backward(self, gout: Tensor, name: str, cache: dict,
                              grads: dict) -> Tensor:
        x, z1, a1, z2 = cache[name]
        g = relu_backward(z2, gout)
        g, gk2, gb2 = conv2d_backward(a1, self.params[f"{name}.conv2"], g)
        grads[f"{name}.conv2"] = LayerParams(kernels=gk2, biases=gb2)
        g = relu_backward(z1, g)
        g, gk1, gb1 = conv2d_backward(x, self.params[f"{name}.conv1"], g)
        grads[f"{name}.conv1"] = LayerParams(kernels=gk1, biases=gb1)
        return g

    def forward(self, image: Tensor) -> Tensor:
        x = np.ascontiguousarray(image, dtype=np.float64)
        if x.ndim != 4:
            raise ValueError(f"forward: input must be NCHW, got rank {x.ndim}")
        n, c, h, w = x.shape
        if c != self.cfg.input_channels:
            raise ValueError(f"forward: expected {self.cfg.input_channels} input "
                             f"channels, got {c}")
        div = 2 ** self.cfg.depth
        if h % div or w % div:
            raise ValueError(f"forward: spatial dims {h}x{w} must be divisible by "
                             f"2^depth = {div}")
        cache: dict = {"input_shape": x.shape, "pool_idx": {}, "upch": {}, "upin": {}}
        cur = x
        for i in range(self.cfg.depth):
            a = self._double_conv(cur, f"enc{i}", cache)
            cur, idx = maxpool2x2_forward(a)
            cache["pool_idx"][i] = idx
        cur = self._double_conv(cur, "bott", cache)
        for i in reversed(range(self.cfg.depth)):
            cache["upin"][i] = cur
            up = deconv2x2s2_forward(cur, self.params[f"up{i}"])
            skip = cache[f"enc{i}"][3]  # z2 pre-relu; recompute the activation
            cat = concat_forward(up, relu_forward(skip))
            cache["upch"][i] = up.shape[1]
            cur = self._double_conv(cat, f"dec{i}", cache)
        logits = conv2d_forward(cur, self.params["head"])
        cache["head.in"] = cur
        self._cache = cache
        return logits

    def backward(self, grad_logits: Tensor) -> dict[str, LayerParams]:
        """Parameter gradients for the most recent forward; consumes the cache."""
        if self._cache is None:
            raise RuntimeError("backward: no cached forward pass; call forward first")
        cache = self._cache
        self._cache = None
        g = np.ascontiguousarray(grad_logits, dtype=np.float64)
        n, _, h, w = cache["input_shape"]
        if g.shape != (n, 1, h, w):
            raise ValueError(f"backward: grad shape {g.shape}, expected {(n, 1, h, w)}")
        grads: dict[str, LayerParams] = {}
        skip_grads: dict[int, Tensor] = {}
        g, gk, gb = conv2d_backward(cache["head.in"], self.params["head"], g)
        grads["head"] = LayerParams(kernels=gk, biases=gb)
        # decoder sweep, innermost last in forward so outermost first here
        for i in range(self.cfg.depth):
            g = self._double_conv_backward(g, f"dec{i}", cache, grads)
            gup, skip_grads[i] = concat_backward(g, cache["upch"][i])
            g, gk, gb = deconv2x2s2_backward(cache["upin"][i],
                                             self.params[f"up{i}"], gup)
            grads[f"up{i}"] = LayerParams(kernels=gk, biases=gb)
        g = self._double_conv_backward(g, "bott", cache, grads)
        # encoder sweep; the skip branch taps each stage's output before pooling
        for i in reversed(range(self.cfg.depth)):
            g = maxpool2x2_backward(cache["pool_idx"][i], g)
            g = g + skip_grads[i]
            g = self._double_conv_backward(g, f"enc{i}", cache, grads)
        return grads


def adam_step(params: dict[str, LayerParams], grads: dict[str, LayerParams],
              state: AdamState, lr: float) -> dict[str, LayerParams]:
    """One Adam update with bias correction; returns the new parameter set."""
    if lr <= 0:
        raise ValueError(f"lr: must be > 0, got {lr}")
    if set(params) != set(grads):
        missing = set(params) ^ set(grads)
        raise ValueError(f"adam_step: parameter/gradient name mismatch: {sorted(missing)}")
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out: dict[str, LayerParams] = {}
    for name, p in params.items():
        gr = grads[name]
        if gr.kernels.shape != p.kernels.shape or gr.biases.shape != p.biases.shape:
            raise ValueError(f"adam_step: gradient shape mismatch for {name}")
        new_vals = []
        for slot, (value, g) in enumerate(((p.kernels, gr.kernels),
                                           (p.biases, gr.biases))):
            m = state.first_moment[name][slot]
            v = state.second_moment[name][slot]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / c1
            vhat = v / c2
            new_vals.append(value - lr * mhat / (np.sqrt(vhat) + eps))
        out[name] = LayerParams(kernels=new_vals[0], biases=new_vals[1])
    return out


def save_checkpoint(path: str, cfg: UNetConfig, params: dict[str, LayerParams]) -> None:
    """Flat binary container: header (magic, version, config), then per tensor
    (name length, name, rank, dims, little-endian float64 payload)."""
    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in params.items():
        tensors.append((f"{name}.kernels", p.kernels))
        tensors.append((f"{name}.biases", p.biases))
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<IIIII", CHECKPOINT_VERSION, cfg.depth,
                          cfg.base_channels, cfg.input_channels, len(tensors))]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path: str) -> tuple[UNetConfig, dict[str, LayerParams]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError(f"checkpoint truncated at byte {off}: needed {n} more bytes")
        out = blob[off:off + n]
        off += n
        return out

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError("checkpoint: bad magic, not a parameter checkpoint")
    version, depth, base_channels, input_channels, count = struct.unpack("<IIIII", take(20))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint: unsupported version {version}")
    cfg = UNetConfig(depth=depth, base_channels=base_channels,
                     input_channels=input_channels)
    raw: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        raw[name] = arr
    params: dict[str, LayerParams] = {}
    for name in raw:
        if name.endswith(".kernels"):
            base = name[:-len(".kernels")]
            bias_name = f"{base}.biases"
            if bias_name not in raw:
                raise ValueError(f"checkpoint: missing biases for layer {base}")
            params[base] = LayerParams(kernels=raw[name], biases=raw[bias_name])
    if off != len(blob):
        raise ValueError(f"checkpoint: {len(blob) - off} trailing bytes after payload")
    return cfg, params
