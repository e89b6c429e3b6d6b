"""Training orchestration and convergence-speedup reporting.

A run trains the small segmentation network for a fixed number of epochs
(epochs x steps_per_epoch Adam steps) under one loss configuration and logs,
per epoch: mean training loss, a smoothed-Jaccard probe on a fixed batch of
training images, ODS/OIS F1 on the held-out set, and cumulative wall time.

compare() plays a baseline configuration against a candidate across shared
seeds and reports epochs-to-target, where the target is the baseline's own
mean final ODS F1. Per-(config, seed) runs are independent; when the env var
CRACKLOSS_THREADS is set above 1 they execute on a thread pool and are
merged in deterministic key order. Everything downstream of a seed is
bit-reproducible; wall-clock columns are measurements and the only
nondeterministic outputs.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Sample, batch_iter, stack_dataset
from .errors import NumericalError
from .loss import (MEAN_PER_PIXEL, HolisticConfig, WeightSpec, holistic,
                   soft_jaccard)
from .metrics import DEFAULT_GRID, evaluate_ods, evaluate_ois
from .model import AdamState, UNet, UNetConfig, adam_step
from .numkit import SeededRng, sigmoid

PROBE_BATCH = 8
EVAL_CHUNK = 10


def worker_threads() -> int:
    """Worker-thread cap from CRACKLOSS_THREADS (default 1)."""
    raw = os.environ.get("CRACKLOSS_THREADS", "1").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"CRACKLOSS_THREADS: not an integer: {raw!r}") from None
    if n < 1:
        raise ValueError(f"CRACKLOSS_THREADS: must be >= 1, got {n}")
    return n


@dataclass(frozen=True)
class TrainConfig:
    spec: WeightSpec = WeightSpec(family="xie")
    hol: HolisticConfig = HolisticConfig(a=1.0, b=0.0, lam=1.0)
    lr: float = 3e-4
    batch_size: int = 2
    steps_per_epoch: int = 50
    epochs: int = 30
    seed: int = 0
    unet: UNetConfig = UNetConfig()
    eval_grid: tuple = DEFAULT_GRID

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr: must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.steps_per_epoch < 1:
            raise ValueError(f"steps_per_epoch: must be >= 1, got {self.steps_per_epoch}")
        if self.epochs < 0:
            raise ValueError(f"epochs: must be >= 0, got {self.epochs}")
        if len(self.eval_grid) == 0 or any(not 0.0 < t < 1.0 for t in self.eval_grid):
            raise ValueError("eval_grid: thresholds must lie strictly inside (0, 1)")

    def run_id(self) -> str:
        tag = self.spec.label()
        if self.hol.b != 0.0:
            tag += f"_a{self.hol.a:g}_b{self.hol.b:g}"
        return tag


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_train_loss: float
    train_jaccard: float
    test_ods_f1: float
    test_ois_f1: float
    wall_seconds: float


@dataclass(frozen=True)
class RunHistory:
    run_id: str
    seed: int
    records: tuple[EpochRecord, ...]

    def final_ods_f1(self) -> float:
        if not self.records:
            raise ValueError("final_ods_f1: empty history")
        return self.records[-1].test_ods_f1


@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    baseline_final_f1: float
    candidate_final_f1: float
    baseline_epochs_to_target: int | None
    candidate_epochs_to_target: int | None
    speedup_ratio: float | None
    reached_within_half: bool


@dataclass(frozen=True)
class SpeedupReport:
    baseline_id: str
    candidate_id: str
    target_f1: float
    baseline_epochs_to_target: float | None
    candidate_epochs_to_target: float | None
    speedup_ratio: float | None
    seeds: tuple[SeedOutcome, ...]
    success_fraction: float
    stats: dict = field(default_factory=dict)


def _probe_batch(train_set: list[Sample]):
    probe = train_set[:min(PROBE_BATCH, len(train_set))]
    return stack_dataset(probe)


def _eval_probs(net: UNet, images: np.ndarray) -> np.ndarray:
    """Forward in fixed-size chunks (keeps the activation cache small);
    chunking cannot change per-image outputs since every layer treats batch
    items independently."""
    outs = []
    for start in range(0, images.shape[0], EVAL_CHUNK):
        logits = net.forward(images[start:start + EVAL_CHUNK])
        net._cache = None
        outs.append(sigmoid(logits))
    return np.concatenate(outs, axis=0)


def probe_jaccard(net: UNet, images: np.ndarray, masks: np.ndarray,
                  lam: float = 1.0) -> float:
    """Mean per-image smoothed Jaccard of the network's probabilities."""
    probs = _eval_probs(net, images)
    vals = [soft_jaccard(probs[i], masks[i], lam) for i in range(images.shape[0])]
    return sum(vals) / len(vals)


def train_run_full(cfg: TrainConfig, train_set: list[Sample],
                   test_set: list[Sample]) -> tuple[RunHistory, UNet]:
    """train_run, but also hands back the trained network."""
    rng = SeededRng(cfg.seed)
    net = UNet(cfg.unet, rng=rng.child("init"))
    state = AdamState(net.params)
    shuffle_rng = rng.child("shuffle")
    probe_images, probe_masks = _probe_batch(train_set)
    test_images, test_masks = stack_dataset(test_set)
    test_probs_masks = [test_masks[i, 0] for i in range(test_masks.shape[0])]

    def endless_batches():
        while True:
            yield from batch_iter(train_set, cfg.batch_size, shuffle_rng)

    stream = endless_batches()
    records = []
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for step in range(1, cfg.steps_per_epoch + 1):
            images, masks = next(stream)
            logits = net.forward(images)
            # per-pixel mean scaling keeps the cross-entropy and region terms
            # at the relative weight the a:b coefficients assume, independent
            # of image size and batch size
            out = holistic(logits, masks, cfg.spec, cfg.hol,
                           reduction=MEAN_PER_PIXEL)
            if not math.isfinite(out.value):
                raise NumericalError(f"non-finite loss {out.value} at epoch {epoch} "
                                     f"step {step} ({cfg.run_id()}, seed {cfg.seed})")
            grads = net.backward(out.grad_logits)
            net.params = adam_step(net.params, grads, state, cfg.lr)
            losses.append(out.value)
        probs = _eval_probs(net, test_images)
        probs_list = [probs[i, 0] for i in range(probs.shape[0])]
        ods = evaluate_ods(probs_list, test_probs_masks, cfg.eval_grid)
        ois = evaluate_ois(probs_list, test_probs_masks, cfg.eval_grid)
        jac = probe_jaccard(net, probe_images, probe_masks)
        records.append(EpochRecord(
            epoch=epoch,
            mean_train_loss=sum(losses) / len(losses),
            train_jaccard=jac,
            test_ods_f1=ods.f1,
            test_ois_f1=ois.f1,
            wall_seconds=time.perf_counter() - t0,
        ))
    return RunHistory(run_id=cfg.run_id(), seed=cfg.seed,
                      records=tuple(records)), net


def train_run(cfg: TrainConfig, train_set: list[Sample],
              test_set: list[Sample]) -> RunHistory:
    """One deterministic training run; see the module docstring."""
    history, _ = train_run_full(cfg, train_set, test_set)
    return history


def epochs_to_target(history: RunHistory, target_f1: float) -> int | None:
    """First epoch whose test ODS F1 reaches the target, else None."""
    for rec in history.records:
        if rec.test_ods_f1 >= target_f1:
            return rec.epoch
    return None


def _mean_std(values: list[float]) -> tuple[float, float]:
    m = sum(values) / len(values)
    var = sum((v - m) ** 2 for v in values) / len(values)
    return m, math.sqrt(var)


def compare(baseline_cfg: TrainConfig, candidate_cfg: TrainConfig, n_seeds: int,
            datasets) -> SpeedupReport:
    """Runs both configs across shared seeds and reports epochs-to-target.

    ``datasets`` is either one (train_set, test_set) pair used for every
    seed, or a callable seed -> (train_set, test_set) so each trial sees its
    own draw of the task. The target is the baseline's mean final ODS F1;
    success counts seeds where the candidate reached it within half the
    baseline's epoch budget.
    """
    if n_seeds < 1:
        raise ValueError(f"n_seeds: must be >= 1, got {n_seeds}")
    seeds = [baseline_cfg.seed + i for i in range(n_seeds)]
    provider = datasets if callable(datasets) else (lambda _seed: datasets)

    jobs = []
    for seed in seeds:
        train_set, test_set = provider(seed)
        jobs.append(("baseline", seed, replace(baseline_cfg, seed=seed), train_set, test_set))
        jobs.append(("candidate", seed, replace(candidate_cfg, seed=seed), train_set, test_set))

    def run_job(job):
        _, _, cfg, train_set, test_set = job
        return train_run(cfg, train_set, test_set)

    threads = worker_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(j) for j in jobs]
    by_key = {(kind, seed): hist for (kind, seed, *_), hist in zip(jobs, results)}

    base_finals = [by_key[("baseline", s)].final_ods_f1() for s in seeds]
    cand_finals = [by_key[("candidate", s)].final_ods_f1() for s in seeds]
    target = sum(base_finals) / len(base_finals)

    outcomes = []
    half_budget = baseline_cfg.epochs / 2.0
    for i, seed in enumerate(seeds):
        b_ett = epochs_to_target(by_key[("baseline", seed)], target)
        c_ett = epochs_to_target(by_key[("candidate", seed)], target)
        ratio = (b_ett / c_ett) if (b_ett is not None and c_ett is not None) else None
        outcomes.append(SeedOutcome(
            seed=seed,
            baseline_final_f1=base_finals[i],
            candidate_final_f1=cand_finals[i],
            baseline_epochs_to_target=b_ett,
            candidate_epochs_to_target=c_ett,
            speedup_ratio=ratio,
            reached_within_half=c_ett is not None and c_ett <= half_budget,
        ))

    b_reached = [o.baseline_epochs_to_target for o in outcomes
                 if o.baseline_epochs_to_target is not None]
    c_reached = [o.candidate_epochs_to_target for o in outcomes
                 if o.candidate_epochs_to_target is not None]
    b_mean = sum(b_reached) / len(b_reached) if b_reached else None
    c_mean = sum(c_reached) / len(c_reached) if c_reached else None
    ratio = (b_mean / c_mean) if (b_mean is not None and c_mean is not None and c_mean > 0) else None

    bf_m, bf_s = _mean_std(base_finals)
    cf_m, cf_s = _mean_std(cand_finals)
    stats = {
        "baseline_final_f1_mean": bf_m, "baseline_final_f1_std": bf_s,
        "candidate_final_f1_mean": cf_m, "candidate_final_f1_std": cf_s,
    }
    if b_reached:
        m, s = _mean_std([float(v) for v in b_reached])
        stats["baseline_epochs_to_target_mean"] = m
        stats["baseline_epochs_to_target_std"] = s
    if c_reached:
        m, s = _mean_std([float(v) for v in c_reached])
        stats["candidate_epochs_to_target_mean"] = m
        stats["candidate_epochs_to_target_std"] = s

    return SpeedupReport(
        baseline_id=baseline_cfg.run_id(),
        candidate_id=candidate_cfg.run_id(),
        target_f1=target,
        baseline_epochs_to_target=b_mean,
        candidate_epochs_to_target=c_mean,
        speedup_ratio=ratio,
        seeds=tuple(outcomes),
        success_fraction=sum(o.reached_within_half for o in outcomes) / len(outcomes),
        stats=stats,
    )


HISTORY_COLUMNS = ("epoch", "loss", "jaccard", "ods_f1", "ois_f1", "seconds")


def history_to_csv(history: RunHistory, with_seconds: bool = True) -> str:
    """CSV per the interface contract. The seconds column is wall-clock
    measurement, the one intentionally nondeterministic field; pass
    with_seconds=False for the byte-reproducible payload."""
    cols = HISTORY_COLUMNS if with_seconds else HISTORY_COLUMNS[:-1]
    lines = [",".join(cols)]
    for r in history.records:
        vals = [str(r.epoch), f"{r.mean_train_loss:.12g}", f"{r.train_jaccard:.12g}",
                f"{r.test_ods_f1:.12g}", f"{r.test_ois_f1:.12g}"]
        if with_seconds:
            vals.append(f"{r.wall_seconds:.3f}")
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def history_to_json(history: RunHistory) -> str:
    doc = {
        "run_id": history.run_id,
        "seed": history.seed,
        "records": [{"epoch": r.epoch, "loss": r.mean_train_loss,
                     "jaccard": r.train_jaccard, "ods_f1": r.test_ods_f1,
                     "ois_f1": r.test_ois_f1, "seconds": r.wall_seconds}
                    for r in history.records],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def report_to_json(report: SpeedupReport) -> str:
    doc = {
        "baseline_id": report.baseline_id,
        "candidate_id": report.candidate_id,
        "target_f1": report.target_f1,
        "baseline_epochs_to_target": report.baseline_epochs_to_target,
        "candidate_epochs_to_target": report.candidate_epochs_to_target,
        "speedup_ratio": report.speedup_ratio,
        "success_fraction": report.success_fraction,
        "stats": report.stats,
        "seeds": [{"seed": o.seed,
                   "baseline_final_f1": o.baseline_final_f1,
                   "candidate_final_f1": o.candidate_final_f1,
                   "baseline_epochs_to_target": o.baseline_epochs_to_target,
                   "candidate_epochs_to_target": o.candidate_epochs_to_target,
                   "speedup_ratio": o.speedup_ratio,
                   "reached_within_half": o.reached_within_half}
                  for o in report.seeds],
    }
    return json.dumps(doc, sort_keys=True, indent=2)
