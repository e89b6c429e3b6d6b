"""Pixelwise scoring of probability maps against binary ground truth.

Precision, recall and F1 come from plain confusion counts (no boundary
matching tolerance). Two threshold protocols are provided:

    ODS  one threshold for the whole dataset, chosen to maximize the F1 of
         the summed confusion counts
    OIS  a separate best threshold per image; the reported score is the
         prf1 of the counts summed at those per-image thresholds

Both sweeps break ties toward the smallest threshold so results are
deterministic, and binarization is strict: a pixel is positive iff
prob > t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numkit import Tensor

# 99 evenly spaced cut points 0.01 .. 0.99
DEFAULT_GRID = tuple(float(i) / 100.0 for i in range(1, 100))

CSV_COLUMNS = ("method", "beta", "gamma", "epoch",
               "ods_p", "ods_r", "ods_f1", "ois_p", "ois_r", "ois_f1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name}: must be a non-negative integer, got {v!r}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class OdsResult:
    threshold: float
    p: float
    r: float
    f1: float


@dataclass(frozen=True)
class PerImageResult:
    best_threshold: float
    f1: float


@dataclass(frozen=True)
class OisResult:
    mean_threshold: float
    p: float
    r: float
    f1: float
    per_image: tuple[PerImageResult, ...]


@dataclass(frozen=True)
class EvalReport:
    ods: OdsResult
    ois: OisResult

    @property
    def per_image(self) -> tuple[PerImageResult, ...]:
        return self.ois.per_image


def _check_binary(arr: Tensor, name: str, op: str) -> Tensor:
    arr = np.asarray(arr, dtype=np.float64)
    bad = (arr != 0.0) & (arr != 1.0)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise ValueError(f"{op}: {name} must be binary, found {arr[tuple(idx)]!r} "
                         f"at index {tuple(int(i) for i in idx)}")
    return arr


def confusion(pred_binary: Tensor, mask: Tensor) -> ConfusionCounts:
    """Exact pixelwise confusion counts of a binary prediction."""
    pred = _check_binary(pred_binary, "pred_binary", "confusion")
    gt = _check_binary(mask, "mask", "confusion")
    if pred.shape != gt.shape:
        raise ValueError(f"confusion: shape mismatch pred {pred.shape} vs mask {gt.shape}")
    p = pred == 1.0
    g = gt == 1.0
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def prf1(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1 with the degenerate-case convention:
    an empty 0/0 ratio counts as 1, and the all-empty case scores (1,1,1)."""
    if c.tp + c.fp + c.fn == 0:
        return (1.0, 1.0, 1.0)
    p = 1.0 if c.tp + c.fp == 0 else c.tp / (c.tp + c.fp)
    r = 1.0 if c.tp + c.fn == 0 else c.tp / (c.tp + c.fn)
    f1 = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
    return (p, r, f1)


def threshold(probs: Tensor, t: float) -> Tensor:
    """Binarize: pixel -> 1 iff prob > t (strict), else 0."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold: t must be in [0, 1], got {t}")
    probs = np.asarray(probs, dtype=np.float64)
    return (probs > t).astype(np.float64)


def _check_lists(probs_list, masks_list, grid, op: str):
    if len(probs_list) == 0 or len(masks_list) == 0:
        raise ValueError(f"{op}: image lists must be nonempty")
    if len(probs_list) != len(masks_list):
        raise ValueError(f"{op}: got {len(probs_list)} probability maps "
                         f"but {len(masks_list)} masks")
    if len(grid) == 0:
        raise ValueError(f"{op}: threshold grid must be nonempty")
    gr = [float(t) for t in grid]
    for t in gr:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"{op}: grid threshold {t} outside [0, 1]")
    if any(b <= a for a, b in zip(gr, gr[1:])):
        raise ValueError(f"{op}: threshold grid must be sorted strictly ascending")
    pairs = []
    for i, (pr, ms) in enumerate(zip(probs_list, masks_list)):
        pr = np.asarray(pr, dtype=np.float64)
        ms = _check_binary(ms, f"mask[{i}]", op)
        if pr.shape != ms.shape:
            raise ValueError(f"{op}: image {i} shape mismatch probs {pr.shape} "
                             f"vs mask {ms.shape}")
        pairs.append((pr, ms))
    return pairs, gr


def _sweep_counts(probs: Tensor, mask: Tensor, grid: list[float]) -> np.ndarray:
    """Confusion counts of one image at every grid threshold.

    Sorting once and binary-searching each cut point gives counts identical
    to thresholding outright: searchsorted(side='right') returns the number
    of values <= t, so n - idx is the strict prob > t count.
    """
    flat = probs.ravel()
    sel = mask.ravel() == 1.0
    pos = np.sort(flat[sel])
    neg = np.sort(flat[~sel])
    g = np.asarray(grid, dtype=np.float64)
    tp = pos.size - np.searchsorted(pos, g, side="right")
    fp = neg.size - np.searchsorted(neg, g, side="right")
    out = np.empty((len(grid), 4), dtype=np.int64)
    out[:, 0] = tp
    out[:, 1] = fp
    out[:, 2] = pos.size - tp
    out[:, 3] = neg.size - fp
    return out


def _best_row(counts: np.ndarray, grid: list[float]) -> tuple[int, tuple[float, float, float]]:
    """Index of the F1-maximizing grid row, smallest threshold on ties."""
    best_i = 0
    best = prf1(ConfusionCounts(*(int(v) for v in counts[0])))
    for i in range(1, len(grid)):
        cand = prf1(ConfusionCounts(*(int(v) for v in counts[i])))
        if cand[2] > best[2]:
            best_i, best = i, cand
    return best_i, best


def evaluate_ods(probs_list, masks_list, grid=DEFAULT_GRID) -> OdsResult:
    """Single dataset-wide threshold maximizing the F1 of summed counts."""
    pairs, gr = _check_lists(probs_list, masks_list, grid, "evaluate_ods")
    total = np.zeros((len(gr), 4), dtype=np.int64)
    for pr, ms in pairs:
        total += _sweep_counts(pr, ms, gr)
    i, (p, r, f1) = _best_row(total, gr)
    return OdsResult(threshold=gr[i], p=p, r=r, f1=f1)


def evaluate_ois(probs_list, masks_list, grid=DEFAULT_GRID) -> OisResult:
    """Per-image best thresholds; scores the counts summed at those choices."""
    pairs, gr = _check_lists(probs_list, masks_list, grid, "evaluate_ois")
    agg = ConfusionCounts(0, 0, 0, 0)
    chosen = []
    per_image = []
    for pr, ms in pairs:
        counts = _sweep_counts(pr, ms, gr)
        i, (_, _, f1) = _best_row(counts, gr)
        agg = agg + ConfusionCounts(*(int(v) for v in counts[i]))
        chosen.append(gr[i])
        per_image.append(PerImageResult(best_threshold=gr[i], f1=f1))
    p, r, f1 = prf1(agg)
    return OisResult(mean_threshold=sum(chosen) / len(chosen), p=p, r=r, f1=f1,
                     per_image=tuple(per_image))


def evaluate(probs_list, masks_list, grid=DEFAULT_GRID) -> EvalReport:
    return EvalReport(ods=evaluate_ods(probs_list, masks_list, grid),
                      ois=evaluate_ois(probs_list, masks_list, grid))


def report_json(report: EvalReport, method: str = "", beta: float = 1.0,
                gamma: float = 1.0, epoch: int = 0) -> str:
    doc = {
        "method": method,
        "beta": beta,
        "gamma": gamma,
        "epoch": epoch,
        "ods": {"threshold": report.ods.threshold, "p": report.ods.p,
                "r": report.ods.r, "f1": report.ods.f1},
        "ois": {"mean_threshold": report.ois.mean_threshold, "p": report.ois.p,
                "r": report.ois.r, "f1": report.ois.f1},
        "per_image": [{"best_threshold": pi.best_threshold, "f1": pi.f1}
                      for pi in report.per_image],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def report_csv_row(report: EvalReport, method: str, beta: float, gamma: float,
                   epoch: int) -> str:
    vals = [method, f"{beta:.12g}", f"{gamma:.12g}", str(epoch)]
    for x in (report.ods.p, report.ods.r, report.ods.f1,
              report.ois.p, report.ois.r, report.ois.f1):
        vals.append(f"{x:.12g}")
    return ",".join(vals)
