"""Adaptive cost-sensitive losses for extremely imbalanced binary pixel
classification.

The weighted cross-entropy puts a penalty q on the minor (crack) class:

    L = -sum_j [ q * y_j * log p_j + (1 - y_j) * log(1 - p_j) ]

where q is derived from alpha, the fraction of negative pixels in the current
batch. Supported penalty families:

    xie       q = alpha / (1 - alpha)          (relative-frequency ratio)
    power     q = beta * (alpha/(1-alpha))**gamma
    log       q = beta * ln(alpha/(1-alpha))
    exp       q = beta * base**(gamma*(2*alpha - 1))
    constant  q fixed (q=1 recovers plain cross-entropy)

With base=10 and gamma=1 the exponential family is bounded by 10*beta <= 10,
which keeps the minor-class penalty moderate no matter how extreme the
imbalance gets.

The holistic loss adds a smoothed Jaccard distance:

    holistic = a * L + b * (1 - d_J),
    d_J = (sum y*p + lam) / (sum y + sum p - sum y*p + lam)

All gradients are analytic with respect to the logits, chaining through
dp/dz = p*(1-p). Per-logit weighted cross-entropy gradient:

    dL/dz_j = p_j             if y_j = 0
            = -q * (1 - p_j)  if y_j = 1
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkit import Tensor, log_sigmoid, sigmoid, tsum

FAMILIES = ("xie", "power", "log", "exp", "constant")

SUM = "sum"
MEAN_PER_PIXEL = "mean_per_pixel"
REDUCTIONS = (SUM, MEAN_PER_PIXEL)

# Beyond |z| = 30 the sigmoid saturates past 1e-13; probability-space formulas
# (the Jaccard terms) clamp here so finite-difference checks stay meaningful.
LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class WeightSpec:
    """Penalty-schedule family and its hyper-parameters.

    ``count_smoothing`` is the additive pixel-count smoothing applied when
    computing alpha (add-one Laplace by default), which keeps alpha strictly
    below 1 even for batches without any crack pixel.
    """

    family: str = "xie"
    beta: float = 1.0
    gamma: float = 1.0
    base: float = 10.0
    q: float = 1.0
    count_smoothing: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family: unknown weighting family {self.family!r}, "
                             f"expected one of {FAMILIES}")
        if self.count_smoothing < 0:
            raise ValueError(f"count_smoothing: must be >= 0, got {self.count_smoothing}")
        if self.family in ("power", "log", "exp") and not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta: must satisfy 0 < beta <= 1, got {self.beta}")
        if self.family == "power" and not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma: must satisfy 0 < gamma <= 1, got {self.gamma}")
        if self.family == "exp":
            if self.base <= 1.0:
                raise ValueError(f"base: must be > 1, got {self.base}")
            if not 0.0 <= self.gamma <= 1.0:
                raise ValueError(f"gamma: must satisfy 0 <= gamma <= 1, got {self.gamma}")
        if self.family == "constant" and self.q <= 0.0:
            raise ValueError(f"q: must be > 0, got {self.q}")

    def label(self) -> str:
        """Short run label, e.g. 'wce_exp_b0.75'."""
        if self.family == "xie":
            return "wce_xie"
        if self.family == "constant":
            return f"wce_const_q{self.q:g}"
        tag = f"wce_{self.family}_b{self.beta:g}"
        if self.family in ("power", "exp") and self.gamma != 1.0:
            tag += f"_g{self.gamma:g}"
        return tag


@dataclass(frozen=True)
class HolisticConfig:
    """Trade-off coefficients of the combined loss a*WCE + b*(1 - d_J)."""

    a: float = 1.0
    b: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"a, b: must be >= 0, got a={self.a}, b={self.b}")
        if self.a + self.b <= 0:
            raise ValueError("a, b: at least one of a, b must be positive")
        if self.lam <= 0:
            raise ValueError(f"lambda: must be > 0, got {self.lam}")


@dataclass(frozen=True)
class BatchStats:
    """Pixel counts of one batch and the (smoothed) negative fraction alpha."""

    neg_count: int
    pos_count: int
    alpha: float


@dataclass
class LossOutput:
    value: float
    grad_logits: Tensor


def _check_binary_mask(mask: Tensor, op: str) -> None:
    bad = (mask != 0.0) & (mask != 1.0)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        val = mask[tuple(idx)]
        raise ValueError(f"{op}: mask must be binary, found {val!r} at index {tuple(int(i) for i in idx)}")


def compute_alpha(masks: Tensor, count_smoothing: float = 1.0) -> BatchStats:
    """Count positives/negatives over the whole batch jointly and return the
    smoothed negative-pixel fraction alpha.

    With smoothing e: alpha = (neg + e) / (neg + pos + 2e); with e = 0 the
    plain ratio neg / (neg + pos).
    """
    masks = np.asarray(masks, dtype=np.float64)
    _check_binary_mask(masks, "compute_alpha")
    pos = int(np.count_nonzero(masks))
    neg = int(masks.size - pos)
    e = float(count_smoothing)
    if e > 0:
        alpha = (neg + e) / (neg + pos + 2.0 * e)
    else:
        alpha = neg / (neg + pos)
    return BatchStats(neg_count=neg, pos_count=pos, alpha=alpha)


def weight_q(spec: WeightSpec, alpha: float) -> float:
    """Evaluate the minor-class penalty q(alpha) for the chosen family."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha: must be in [0, 1], got {alpha}")
    if spec.family == "constant":
        return spec.q
    if spec.family == "exp":
        return spec.beta * spec.base ** (spec.gamma * (2.0 * alpha - 1.0))
    # ratio families are singular at alpha == 1
    if alpha == 1.0:
        raise ValueError(f"{spec.family} weighting is singular at alpha == 1 "
                         "(batch without crack pixels); set count_smoothing > 0 "
                         "so alpha stays strictly below 1")
    ratio = alpha / (1.0 - alpha)
    if spec.family == "xie":
        return ratio
    if spec.family == "power":
        return spec.beta * ratio ** spec.gamma
    # log family: only defined where the penalty is positive (alpha > 0.5)
    if alpha <= 0.5:
        raise ValueError(f"log weighting needs alpha > 0.5 (imbalanced regime), got alpha={alpha}")
    return spec.beta * math.log(ratio)


def _check_pair(logits: Tensor, mask: Tensor, op: str) -> tuple[Tensor, Tensor]:
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if logits.shape != mask.shape:
        raise ValueError(f"{op}: shape mismatch logits {logits.shape} vs mask {mask.shape}")
    _check_binary_mask(mask, op)
    return logits, mask


def wce_forward(logits: Tensor, mask: Tensor, q: float, reduction: str = SUM) -> float:
    """Weighted cross-entropy over the batch.

    Evaluated through log-sigmoid so saturated logits never produce log(0):
    log p = log_sigmoid(z) and log(1-p) = log_sigmoid(-z).
    """
    logits, mask = _check_pair(logits, mask, "wce_forward")
    if q <= 0:
        raise ValueError(f"wce_forward: q must be > 0, got {q}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"wce_forward: unknown reduction {reduction!r}")
    terms = q * mask * log_sigmoid(logits) + (1.0 - mask) * log_sigmoid(-logits)
    value = -tsum(terms)
    if reduction == MEAN_PER_PIXEL:
        value /= logits.size
    return value


def wce_grad_logits(logits: Tensor, mask: Tensor, q: float, reduction: str = SUM) -> Tensor:
    """Analytic d(wce_forward)/d(logits): p where y=0, -q*(1-p) where y=1."""
    logits, mask = _check_pair(logits, mask, "wce_grad_logits")
    if q <= 0:
        raise ValueError(f"wce_grad_logits: q must be > 0, got {q}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"wce_grad_logits: unknown reduction {reduction!r}")
    p = sigmoid(logits)
    grad = np.where(mask == 0.0, p, -q * (1.0 - p))
    if reduction == MEAN_PER_PIXEL:
        grad = grad / logits.size
    return grad


def _check_probs(probs: Tensor, mask: Tensor, lam: float, op: str) -> tuple[Tensor, Tensor]:
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if probs.shape != mask.shape:
        raise ValueError(f"{op}: shape mismatch probs {probs.shape} vs mask {mask.shape}")
    _check_binary_mask(mask, op)
    if lam <= 0:
        raise ValueError(f"{op}: lambda must be > 0, got {lam}")
    bad = (probs < -1e-9) | (probs > 1.0 + 1e-9)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        val = probs[tuple(idx)]
        raise ValueError(f"{op}: probabilities must lie in [0, 1], found {val!r} "
                         f"at index {tuple(int(i) for i in idx)}")
    return probs, mask


def soft_jaccard(probs: Tensor, mask: Tensor, lam: float) -> float:
    """Smoothed Jaccard coefficient of a probability map against a binary
    mask, computed over the whole batch jointly. The smoothing term makes the
    empty-vs-empty case equal 1."""
    probs, mask = _check_probs(probs, mask, lam, "soft_jaccard")
    inter = tsum(mask * probs)
    union = tsum(mask) + tsum(probs) - inter
    return (inter + lam) / (union + lam)


def jaccard_distance_grad(probs: Tensor, mask: Tensor, lam: float) -> Tensor:
    """Gradient of the Jaccard distance d = 1 - d_J with respect to probs.

    With I = sum(y*p) + lam and U = sum(y) + sum(p) - sum(y*p) + lam:
    dd/dp_j = -(y_j * U - (1 - y_j) * I) / U**2.
    """
    probs, mask = _check_probs(probs, mask, lam, "jaccard_distance_grad")
    inter = tsum(mask * probs) + lam
    union = tsum(mask) + tsum(probs) - tsum(mask * probs) + lam
    return -(mask * union - (1.0 - mask) * inter) / (union * union)


def holistic(logits: Tensor, mask: Tensor, spec: WeightSpec, cfg: HolisticConfig,
             reduction: str = SUM) -> LossOutput:
    """Combined loss a*WCE + b*(1 - d_J) with its gradient w.r.t. the logits.

    alpha (and so q) is recomputed from the mask batch every call, which is
    what makes the penalty batch-adaptive. The Jaccard branch works on
    p = sigmoid(clamp(z)) and chains through dp/dz = p*(1-p).
    """
    logits, mask = _check_pair(logits, mask, "holistic")
    stats = compute_alpha(mask, spec.count_smoothing)
    q = weight_q(spec, stats.alpha)
    value = 0.0
    grad = np.zeros_like(logits)
    if cfg.a != 0.0:
        value += cfg.a * wce_forward(logits, mask, q, reduction)
        grad += cfg.a * wce_grad_logits(logits, mask, q, reduction)
    if cfg.b != 0.0:
        p = sigmoid(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))
        value += cfg.b * (1.0 - soft_jaccard(p, mask, cfg.lam))
        grad += cfg.b * jaccard_distance_grad(p, mask, cfg.lam) * p * (1.0 - p)
    return LossOutput(value=value, grad_logits=grad)
