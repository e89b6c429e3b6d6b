"""Synthetic crack imagery, PGM raster I/O, augmentation, and batching.

Synthetic samples imitate road-surface photographs at desk scale: a noisy
mid-gray background crossed by a few thin dark random-walk polylines. The
mask marks exactly the painted crack pixels. Per-image crack budgets are
spread log-uniformly around the configured target rate so that individual
images range from sparse to dense while the dataset-level positive rate
stays on target; mini-batches drawn from such a set show the strong
batch-to-batch imbalance swings that adaptive penalty schedules react to.

Rasters are stored as 8-bit PGM (P2 ASCII or P5 binary), datasets as an
images/ + masks/ directory pair plus a manifest.json listing the pairs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PgmParseError
from .numkit import SeededRng, Tensor

FLIP_H = "FlipH"
FLIP_V = "FlipV"
ROT90 = "Rot90"
ROT180 = "Rot180"
ROT270 = "Rot270"
AUGMENT_OPS = (FLIP_H, FLIP_V, ROT90, ROT180, ROT270)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 64
    target_pos_rate: float = 0.011
    n_cracks_min: int = 1
    n_cracks_max: int = 3
    noise_sigma: float = 0.05
    crack_intensity_delta: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ConfigError(f"width, height: must be >= 4, got {self.width}x{self.height}")
        if not 0.0 < self.target_pos_rate <= 0.1:
            raise ConfigError(f"target_pos_rate: must be in (0, 0.1], got {self.target_pos_rate}")
        if not 1 <= self.n_cracks_min <= self.n_cracks_max:
            raise ConfigError(f"n_cracks_min, n_cracks_max: need 1 <= min <= max, "
                              f"got {self.n_cracks_min}, {self.n_cracks_max}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma: must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.crack_intensity_delta <= 0.5:
            raise ConfigError(f"crack_intensity_delta: must be in [0, 0.5], "
                              f"got {self.crack_intensity_delta}")
        if round(self.target_pos_rate * self.width * self.height) < 1:
            raise ConfigError(f"target_pos_rate: {self.target_pos_rate} yields no crack "
                              f"pixels at {self.width}x{self.height}")


@dataclass(frozen=True)
class Sample:
    """One grayscale image (1, H, W) in [0,1] with its binary mask (H, W)."""

    image: Tensor
    mask: Tensor

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        msk = np.asarray(self.mask, dtype=np.float64)
        if img.ndim != 3 or img.shape[0] != 1:
            raise ValueError(f"image: must be (1, H, W), got {img.shape}")
        if msk.shape != img.shape[1:]:
            raise ValueError(f"mask: shape {msk.shape} does not match image {img.shape[1:]}")
        if np.any(img < 0.0) or np.any(img > 1.0):
            raise ValueError("image: values must lie in [0, 1]")
        if np.any((msk != 0.0) & (msk != 1.0)):
            raise ValueError("mask: must be binary")
        object.__setattr__(self, "image", np.ascontiguousarray(img))
        object.__setattr__(self, "mask", np.ascontiguousarray(msk))

    @property
    def pos_rate(self) -> float:
        return float(np.count_nonzero(self.mask)) / self.mask.size


def _paint_walk(mask: np.ndarray, rng: SeededRng, budget: int, width: int) -> int:
    """One random-walk polyline of the given stroke width; paints until it
    either spends its budget or walks long enough. Returns pixels painted."""
    h, w = mask.shape
    y = float(rng.uniform((), low=0.0, high=h - 1.0))
    x = float(rng.uniform((), low=0.0, high=w - 1.0))
    angle = float(rng.uniform((), low=0.0, high=2.0 * math.pi))
    painted = 0
    max_steps = 4 * (h + w)
    for _ in range(max_steps):
        iy, ix = int(round(y)), int(round(x))
        for dy, dx in ((0, 0), (1, 0)) if width == 2 else ((0, 0),):
            py, px = iy + dy, ix + dx
            if 0 <= py < h and 0 <= px < w and mask[py, px] == 0.0:
                mask[py, px] = 1.0
                painted += 1
        if painted >= budget:
            break
        angle += float(rng.normal((), std=0.35))
        y += math.sin(angle)
        x += math.cos(angle)
        if not (-2.0 < y < h + 1.0 and -2.0 < x < w + 1.0):
            break
    return painted


# Log-uniform per-image budget multipliers over [1/SPREAD, SPREAD], divided by
# the distribution mean so the dataset-level rate stays on target. The wide
# spread mirrors real crack corpora, where per-crop density varies by orders
# of magnitude and some crops are nearly crack-free.
_SPREAD = 27.0
_SPREAD_MEAN = (_SPREAD - 1.0 / _SPREAD) / (2.0 * math.log(_SPREAD))


def synth_generate(cfg: SynthConfig, count: int) -> list[Sample]:
    """Deterministic per seed; realized dataset positive rate lands within
    +-50% relative of cfg.target_pos_rate (tightly so for large counts)."""
    if count < 1:
        raise ConfigError(f"count: must be >= 1, got {count}")
    rng = SeededRng(cfg.seed).child("synth")
    samples = []
    for _ in range(count):
        mask = np.zeros((cfg.height, cfg.width), dtype=np.float64)
        mult = math.exp(float(rng.uniform((), low=-math.log(_SPREAD), high=math.log(_SPREAD))))
        budget = max(1, int(round(cfg.target_pos_rate * cfg.width * cfg.height
                                  * mult / _SPREAD_MEAN)))
        n_cracks = int(rng.integers(cfg.n_cracks_min, cfg.n_cracks_max + 1))
        remaining = budget
        # walks can die early at the border, so allow extra strokes until the
        # budget is met (bounded, in case the image is nearly full)
        for c in range(4 * n_cracks):
            if remaining <= 0:
                break
            share = remaining if c >= n_cracks - 1 else max(1, remaining // (n_cracks - c))
            stroke_w = 2 if float(rng.uniform(())) < 0.3 else 1
            remaining -= _paint_walk(mask, rng, share, stroke_w)
        image = np.full((cfg.height, cfg.width), 0.5)
        image[mask == 1.0] -= cfg.crack_intensity_delta
        if cfg.noise_sigma > 0:
            image += rng.normal(image.shape, std=cfg.noise_sigma)
        image = np.clip(image, 0.0, 1.0)
        samples.append(Sample(image=image[None], mask=mask))
    return samples


def realized_pos_rate(samples: list[Sample]) -> float:
    total = sum(s.mask.size for s in samples)
    pos = sum(int(np.count_nonzero(s.mask)) for s in samples)
    return pos / total


def gaussian_noise_augment(sample: Sample, sigma: float, rng: SeededRng) -> Sample:
    if sigma < 0:
        raise ValueError(f"sigma: must be >= 0, got {sigma}")
    if sigma == 0:
        return sample
    noisy = np.clip(sample.image + rng.normal(sample.image.shape, std=sigma), 0.0, 1.0)
    return Sample(image=noisy, mask=sample.mask)


def flip_rotate_augment(sample: Sample, op: str) -> Sample:
    if op not in AUGMENT_OPS:
        raise ValueError(f"op: unknown augmentation {op!r}, expected one of {AUGMENT_OPS}")
    img, msk = sample.image, sample.mask
    if op in (ROT90, ROT270) and img.shape[1] != img.shape[2]:
        raise ValueError(f"op: {op} needs a square image, got {img.shape[1]}x{img.shape[2]}")
    if op == FLIP_H:
        img, msk = img[:, :, ::-1], msk[:, ::-1]
    elif op == FLIP_V:
        img, msk = img[:, ::-1, :], msk[::-1, :]
    else:
        turns = {ROT90: 1, ROT180: 2, ROT270: 3}[op]
        img = np.rot90(img, k=turns, axes=(1, 2))
        msk = np.rot90(msk, k=turns)
    return Sample(image=np.ascontiguousarray(img), mask=np.ascontiguousarray(msk))


def _pgm_tokens(blob: bytes):
    """Yields (token, byte_offset) over the PGM header, skipping whitespace
    and # comments. Offsets point at the first byte of each token."""
    i = 0
    n = len(blob)
    while i < n:
        ch = blob[i:i + 1]
        if ch in b" \t\r\n":
            i += 1
            continue
        if ch == b"#":
            while i < n and blob[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and blob[i:i + 1] not in b" \t\r\n":
            i += 1
        yield blob[start:i], start
        # exactly one whitespace byte separates maxval from a P5 payload, so
        # the caller needs the position right after the token
    return


def load_pgm(path: str) -> Tensor:
    """Reads an 8-bit P2 (ASCII) or P5 (binary) PGM scaled to [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    toks = _pgm_tokens(blob)

    def next_tok(what: str):
        try:
            return next(toks)
        except StopIteration:
            raise PgmParseError(f"{path}: truncated header, missing {what} "
                                f"at byte {len(blob)}") from None

    magic, off = next_tok("magic")
    if magic not in (b"P2", b"P5"):
        raise PgmParseError(f"{path}: bad magic {magic!r} at byte {off}, expected P2 or P5")
    fields = []
    for what in ("width", "height", "maxval"):
        tok, off = next_tok(what)
        try:
            val = int(tok)
        except ValueError:
            raise PgmParseError(f"{path}: {what} {tok!r} at byte {off} is not an "
                                f"integer") from None
        if val <= 0:
            raise PgmParseError(f"{path}: {what} must be positive, got {val} at byte {off}")
        fields.append((val, off, tok))
    (width, _, _), (height, _, _), (maxval, mv_off, mv_tok) = fields
    if maxval > 255:
        raise PgmParseError(f"{path}: unsupported maxval {maxval} at byte {mv_off}, "
                            f"only 8-bit (<= 255) supported")
    count = width * height
    if magic == b"P5":
        # payload starts one whitespace byte after the maxval token
        start = mv_off + len(mv_tok) + 1
        payload = blob[start:start + count]
        if len(payload) < count:
            raise PgmParseError(f"{path}: truncated payload at byte {start + len(payload)}, "
                                f"expected {count} bytes")
        raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        vals = []
        for _ in range(count):
            tok, off = next_tok(f"pixel {len(vals)}")
            try:
                v = int(tok)
            except ValueError:
                raise PgmParseError(f"{path}: pixel value {tok!r} at byte {off} is not "
                                    f"an integer") from None
            if not 0 <= v <= maxval:
                raise PgmParseError(f"{path}: pixel value {v} at byte {off} outside "
                                    f"[0, {maxval}]")
            vals.append(v)
        raw = np.array(vals, dtype=np.float64)
    if np.any(raw > maxval):
        bad = int(np.argmax(raw > maxval))
        raise PgmParseError(f"{path}: pixel {bad} exceeds maxval {maxval}")
    return (raw / maxval).reshape(height, width)


def save_pgm(path: str, values: Tensor, binary: bool = True) -> None:
    """Writes values in [0, 1] as an 8-bit PGM (P5 by default, else P2)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"values: must be 2-D, got shape {arr.shape}")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("values: must lie in [0, 1]")
    pix = np.round(arr * 255.0).astype(np.uint8)
    h, w = pix.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n255\n".encode("ascii")
    if binary:
        body = pix.tobytes()
    else:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in pix).encode("ascii")
        body += b"\n"
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + body)
    os.replace(tmp, path)


def binarize_gt(t: Tensor, threshold: float = 0.5) -> Tensor:
    """Maps values strictly above the threshold to 1, the rest to 0."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold: must be in [0, 1], got {threshold}")
    return (np.asarray(t, dtype=np.float64) > threshold).astype(np.float64)


def save_dataset(out_dir: str, samples: list[Sample]) -> str:
    """Writes images/, masks/ PGM pairs plus manifest.json; returns the
    manifest path."""
    img_dir = os.path.join(out_dir, "images")
    msk_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(msk_dir, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        img_rel = os.path.join("images", f"{i:05d}.pgm")
        msk_rel = os.path.join("masks", f"{i:05d}.pgm")
        save_pgm(os.path.join(out_dir, img_rel), s.image[0])
        save_pgm(os.path.join(out_dir, msk_rel), s.mask)
        entries.append({"image_path": img_rel, "mask_path": msk_rel})
    manifest = os.path.join(out_dir, "manifest.json")
    tmp = f"{manifest}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, manifest)
    return manifest


def load_dataset(manifest_path: str) -> list[Sample]:
    with open(manifest_path, encoding="utf-8") as fh:
        entries = json.load(fh)
    base = os.path.dirname(manifest_path)
    samples = []
    for e in entries:
        img = load_pgm(os.path.join(base, e["image_path"]))
        msk = binarize_gt(load_pgm(os.path.join(base, e["mask_path"])))
        samples.append(Sample(image=img[None], mask=msk))
    return samples


def batch_iter(samples: list[Sample], batch_size: int, shuffle_rng: SeededRng):
    """One seeded-shuffle pass over the dataset; yields (images, masks) NCHW
    pairs, keeping the short final batch."""
    if len(samples) == 0:
        raise ValueError("batch_iter: empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_iter: batch_size must be >= 1, got {batch_size}")
    order = shuffle_rng.permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[int(j)] for j in order[start:start + batch_size]]
        images = np.stack([s.image for s in chunk])
        masks = np.stack([s.mask[None] for s in chunk])
        yield images, masks


def stack_dataset(samples: list[Sample]):
    """All samples as one (N,1,H,W) image array and matching mask array."""
    if len(samples) == 0:
        raise ValueError("stack_dataset: empty dataset")
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask[None] for s in samples])
    return images, masks
