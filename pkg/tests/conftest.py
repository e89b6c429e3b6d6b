"""Shared test fixtures and independent oracles."""

import numpy as np

from crackloss.metrics import ConfusionCounts, prf1


def brute_counts(probs, mask, t):
    """Confusion counts at one threshold by plain comparisons."""
    pred = (probs > t).astype(np.int64)
    m = mask.astype(np.int64)
    tp = int(np.sum((pred == 1) & (m == 1)))
    fp = int(np.sum((pred == 1) & (m == 0)))
    fn = int(np.sum((pred == 0) & (m == 1)))
    tn = int(np.sum((pred == 0) & (m == 0)))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def brute_ods(probs_list, masks_list, grid):
    """Exhaustive dataset-threshold search; ascending grid order plus
    strict > keeps the smallest tied threshold, mirroring the contract."""
    best = None
    for t in grid:
        pooled = ConfusionCounts(0, 0, 0, 0)
        for p, m in zip(probs_list, masks_list):
            pooled = pooled + brute_counts(p, m, t)
        f1 = prf1(pooled)[2]
        if best is None or f1 > best[1]:
            best = (t, f1, pooled)
    return best


def brute_ois(probs_list, masks_list, grid):
    """Exhaustive per-image threshold search returning per-image choices
    and the pooled counts at those choices."""
    pooled = ConfusionCounts(0, 0, 0, 0)
    choices = []
    for p, m in zip(probs_list, masks_list):
        best = None
        for t in grid:
            f1 = prf1(brute_counts(p, m, t))[2]
            if best is None or f1 > best[1]:
                best = (t, f1)
        choices.append(best)
        pooled = pooled + brute_counts(p, m, best[0])
    return choices, pooled


def corrupted_pgm_cases() -> list[tuple[str, bytes]]:
    """Ten malformed PGM files: truncation at every header field plus the
    classic header corruptions. Each must raise a parse error on load."""
    good_payload = bytes(range(16))
    return [
        ("empty_file", b""),
        ("bad_magic", b"P3\n4 4\n255\n" + good_payload),
        ("missing_width", b"P5\n"),
        ("missing_height", b"P5\n4"),
        ("missing_maxval", b"P5\n4 4\n"),
        ("non_integer_width", b"P5\nfour 4\n255\n" + good_payload),
        ("zero_width", b"P5\n0 4\n255\n" + good_payload),
        ("negative_height", b"P5\n4 -4\n255\n" + good_payload),
        ("maxval_too_large", b"P5\n4 4\n65535\n" + good_payload * 2),
        ("truncated_payload", b"P5\n4 4\n255\n" + good_payload[:7]),
    ]
