"""Central finite-difference verification of every analytic gradient.

Each suite draws seeded random instances, evaluates the analytic gradient,
and compares against the two-sided difference quotient with step 1e-5. The
reported error is

    max|analytic - numeric| / max(1, max|numeric|)

i.e. absolute error normalized by the gradient's own scale, floored so that
near-zero gradients are judged absolutely. Inputs to kinked layers (relu,
maxpool) are drawn with a margin from the kink so the difference quotient
is taken on a smooth neighborhood; this is a property of the check, not of
the layers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layers import (LayerParams, concat_backward, concat_forward,
                     conv2d_backward, conv2d_forward, deconv2x2s2_backward,
                     deconv2x2s2_forward, maxpool2x2_backward,
                     maxpool2x2_forward, relu_backward, relu_forward)
from .loss import (HolisticConfig, WeightSpec, holistic, jaccard_distance_grad,
                   soft_jaccard, wce_forward, wce_grad_logits)
from .model import UNet, UNetConfig
from .numkit import SeededRng, Tensor, tsum

STEP = 1e-5
LAYER_TOL = 1e-6
NETWORK_TOL = 1e-5


@dataclass(frozen=True)
class SuiteResult:
    name: str
    max_rel_err: float
    tol: float
    instances: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def central_difference(f: Callable[[Tensor], float], x: Tensor,
                       step: float = STEP) -> Tensor:
    """Two-sided difference quotient of a scalar function, one coordinate at
    a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x)
        flat[i] = keep - step
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_error(analytic: Tensor, numeric: Tensor) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"rel_error: shape mismatch {analytic.shape} vs {numeric.shape}")
    denom = max(1.0, float(np.max(np.abs(numeric)))) if numeric.size else 1.0
    return float(np.max(np.abs(analytic - numeric))) / denom if numeric.size else 0.0


def _away_from_zero(rng: SeededRng, shape, margin: float = 0.1) -> Tensor:
    """Values with |v| in [margin, margin + 1], either sign."""
    mag = rng.uniform(shape, low=margin, high=margin + 1.0)
    sign = np.where(rng.uniform(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _pool_safe_input(rng: SeededRng, shape) -> Tensor:
    """Random values whose 2x2 windows contain no near-ties, so max pooling
    is locally smooth under the difference step."""
    n, c, h, w = shape
    spaced = np.array([0.2, 0.45, 0.7, 0.95])
    out = np.empty(shape)
    for i in range(n):
        for ch in range(c):
            for y in range(0, h, 2):
                for x in range(0, w, 2):
                    vals = spaced[rng.permutation(4)] + rng.uniform((4,), low=-0.05,
                                                                    high=0.05)
                    out[i, ch, y:y + 2, x:x + 2] = vals.reshape(2, 2)
    return out


def _bernoulli_mask(rng: SeededRng, shape, p: float = 0.3) -> Tensor:
    return (rng.uniform(shape) < p).astype(np.float64)


def check_wce(instances: int, seed: int = 101) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        logits = rng.normal((2, 1, 4, 4), std=2.0)
        mask = _bernoulli_mask(rng, logits.shape)
        q = float(rng.uniform((), low=0.5, high=10.0))
        ana = wce_grad_logits(logits, mask, q)
        num = central_difference(lambda z: wce_forward(z, mask, q), logits)
        worst = max(worst, rel_error(ana, num))
    return worst


def check_jaccard(instances: int, seed: int = 102) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        probs = rng.uniform((2, 1, 4, 4), low=0.05, high=0.95)
        mask = _bernoulli_mask(rng, probs.shape)
        lam = float(rng.uniform((), low=0.5, high=2.0))
        ana = jaccard_distance_grad(probs, mask, lam)
        num = central_difference(lambda p: 1.0 - soft_jaccard(p, mask, lam), probs)
        worst = max(worst, rel_error(ana, num))
    return worst


def _cotangent_err(rng: SeededRng, forward, backward, arrays) -> float:
    """Checks d<R, f(x)>/dx against backward(R) for each array argument.

    ``arrays`` maps positions in the argument tuple to check; forward takes
    the tuple, backward takes (args, R) and returns matching grads."""
    args = tuple(arrays)
    out = forward(args)
    r = rng.normal(out.shape)
    grads = backward(args, r)
    worst = 0.0
    for pos, ana in enumerate(grads):
        if ana is None:
            continue

        def scalar(x, pos=pos):
            new_args = list(args)
            new_args[pos] = x
            return tsum(forward(tuple(new_args)) * r)

        num = central_difference(scalar, args[pos])
        worst = max(worst, rel_error(ana, num))
    return worst


def check_conv(instances: int, seed: int = 103) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        x = rng.normal((1, 2, 5, 5))
        k = rng.normal((2, 2, 3, 3), std=0.5)
        b = rng.normal((2,), std=0.5)

        def fwd(args):
            xx, kk, bb = args
            return conv2d_forward(xx, LayerParams(kernels=kk, biases=bb))

        def bwd(args, r):
            xx, kk, bb = args
            return conv2d_backward(xx, LayerParams(kernels=kk, biases=bb), r)

        worst = max(worst, _cotangent_err(rng, fwd, bwd, (x, k, b)))
    return worst


def check_relu(instances: int, seed: int = 104) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        x = _away_from_zero(rng, (2, 2, 4, 4))
        out = relu_forward(x)
        r = rng.normal(out.shape)
        ana = relu_backward(x, r)
        num = central_difference(lambda xx: tsum(relu_forward(xx) * r), x)
        worst = max(worst, rel_error(ana, num))
    return worst


def check_maxpool(instances: int, seed: int = 105) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        x = _pool_safe_input(rng, (1, 2, 4, 4))
        out, idx = maxpool2x2_forward(x)
        r = rng.normal(out.shape)
        ana = maxpool2x2_backward(idx, r)
        num = central_difference(lambda xx: tsum(maxpool2x2_forward(xx)[0] * r), x)
        worst = max(worst, rel_error(ana, num))
    return worst


def check_deconv(instances: int, seed: int = 106) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        x = rng.normal((1, 2, 3, 3))
        k = rng.normal((2, 2, 2, 2), std=0.5)
        b = rng.normal((2,), std=0.5)

        def fwd(args):
            xx, kk, bb = args
            return deconv2x2s2_forward(xx, LayerParams(kernels=kk, biases=bb))

        def bwd(args, r):
            xx, kk, bb = args
            return deconv2x2s2_backward(xx, LayerParams(kernels=kk, biases=bb), r)

        worst = max(worst, _cotangent_err(rng, fwd, bwd, (x, k, b)))
    return worst


def check_concat(instances: int, seed: int = 107) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        a = rng.normal((2, 2, 3, 3))
        b = rng.normal((2, 3, 3, 3))
        out = concat_forward(a, b)
        r = rng.normal(out.shape)
        ga, gb = concat_backward(r, a.shape[1])
        num_a = central_difference(lambda aa: tsum(concat_forward(aa, b) * r), a)
        num_b = central_difference(lambda bb: tsum(concat_forward(a, bb) * r), b)
        worst = max(worst, rel_error(ga, num_a), rel_error(gb, num_b))
    return worst


def _flatten_grads(grads: dict[str, LayerParams], names: list[str]) -> Tensor:
    parts = []
    for name in names:
        parts.append(grads[name].kernels.ravel())
        parts.append(grads[name].biases.ravel())
    return np.concatenate(parts)


def _forward_smooth_logits(net: UNet, x: Tensor, margin: float = 1e-3):
    """Forward pass returning logits only when no activation sits within
    ``margin`` of a relu kink or a pooling near-tie; otherwise None. The
    difference quotient needs a locally smooth function, so rough draws are
    rejected and resampled by the caller."""
    logits = net.forward(x)
    cache = net._cache
    blocks = [f"enc{i}" for i in range(net.cfg.depth)] + ["bott"] + \
             [f"dec{i}" for i in range(net.cfg.depth)]
    for name in blocks:
        _, z1, _, z2 = cache[name]
        if min(float(np.min(np.abs(z1))), float(np.min(np.abs(z2)))) < margin:
            return None
    for i in range(net.cfg.depth):
        pooled_in = relu_forward(cache[f"enc{i}"][3])
        n, c, h, w = pooled_in.shape
        win = pooled_in.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = np.sort(win.reshape(n, c, h // 2, w // 2, 4), axis=-1)
        top, second = win[..., 3], win[..., 2]
        if np.any((top > margin) & (top - second < margin)):
            return None
    return logits


def check_unet_depth1(instances: int, seed: int = 108) -> float:
    """Full-network parameter gradient against finite differences, with the
    combined loss on top so every layer and both loss branches are crossed."""
    spec = WeightSpec(family="exp", beta=0.75)
    hol = HolisticConfig(a=1.0, b=1.0, lam=1.0)
    cfg = UNetConfig(depth=1, base_channels=1, input_channels=1)
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(instances):
        logits = None
        while logits is None:
            net = UNet(cfg, rng=rng.child(int(rng.integers(0, 2 ** 31))))
            x = rng.uniform((1, 1, 4, 4))
            mask = _bernoulli_mask(rng, (1, 1, 4, 4), p=0.4)
            logits = _forward_smooth_logits(net, x)
        out = holistic(logits, mask, spec, hol)
        grads = net.backward(out.grad_logits)
        names = sorted(net.params)
        ana = _flatten_grads(grads, names)

        num_parts = []
        for name in names:
            for slot in ("kernels", "biases"):
                base = getattr(net.params[name], slot)

                def scalar(v, name=name, slot=slot):
                    trial = dict(net.params)
                    old = trial[name]
                    if slot == "kernels":
                        trial[name] = LayerParams(kernels=v, biases=old.biases)
                    else:
                        trial[name] = LayerParams(kernels=old.kernels, biases=v)
                    probe = UNet(cfg, params=trial)
                    return holistic(probe.forward(x), mask, spec, hol).value

                num_parts.append(central_difference(scalar, base).ravel())
        num = np.concatenate(num_parts)
        worst = max(worst, rel_error(ana, num))
    return worst


def run_all(instances: int = 100) -> list[SuiteResult]:
    """Every suite at its acceptance tolerance, in a fixed order."""
    suites = [
        ("wce_grad_logits", check_wce, LAYER_TOL),
        ("jaccard_distance_grad", check_jaccard, LAYER_TOL),
        ("conv2d", check_conv, LAYER_TOL),
        ("relu", check_relu, LAYER_TOL),
        ("maxpool2x2", check_maxpool, LAYER_TOL),
        ("deconv2x2s2", check_deconv, LAYER_TOL),
        ("concat", check_concat, LAYER_TOL),
        ("unet_depth1", check_unet_depth1, NETWORK_TOL),
    ]
    results = []
    for name, fn, tol in suites:
        t0 = time.perf_counter()
        err = fn(instances)
        results.append(SuiteResult(name=name, max_rel_err=err, tol=tol,
                                   instances=instances,
                                   seconds=time.perf_counter() - t0))
    return results
