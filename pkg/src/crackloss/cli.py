"""Command-line interface.

Commands:

    synth       generate a synthetic crack dataset (PGM + manifest)
    train       train one run, write history CSV/JSON and a checkpoint
    eval        score a directory of probability maps against masks
    sweep       compare exponential-weight candidates against the ratio
                baseline across a list of beta values
    gradcheck   run every finite-difference suite

Global flags (accepted before or after the command): --config, --out,
--seed, --seeds. Exit codes: 0 ok, 1 configuration error, 2 I/O or file
format error, 3 numerical failure (non-finite loss or failed gradient
check). Output files are written to a temp name then renamed, so failures
never leave partial files. The env var CRACKLOSS_THREADS (default 1) caps
bench worker threads.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import bench, gradcheck, metrics
from .config import CliConfig, build_cli_config, load_config_file
from .data import (binarize_gt, load_dataset, load_pgm, realized_pos_rate,
                   save_dataset, synth_generate)
from .errors import ConfigError, NumericalError, PgmParseError
from .model import save_checkpoint


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_cli_config(ns) -> CliConfig:
    raw = load_config_file(ns.config) if ns.config else {}
    return build_cli_config(raw, seed_override=ns.seed, out_override=ns.out)


def _ensure_outdir(cfg: CliConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _datasets_for_seed(cfg: CliConfig, seed: int):
    if cfg.train_manifest:
        return load_dataset(cfg.train_manifest), load_dataset(cfg.test_manifest)
    train = synth_generate(replace(cfg.synth, seed=seed), cfg.train_count)
    test = synth_generate(replace(cfg.synth, seed=seed + 10_000), cfg.test_count)
    return train, test


def cmd_synth(ns) -> int:
    cfg = _load_cli_config(ns)
    out_dir = _ensure_outdir(cfg)
    samples = synth_generate(cfg.synth, cfg.train_count)
    manifest = save_dataset(out_dir, samples)
    rate = realized_pos_rate(samples)
    print(f"wrote {len(samples)} samples to {manifest}")
    print(f"realized_pos_rate={rate:.6f} (target {cfg.synth.target_pos_rate})")
    return 0


def cmd_train(ns) -> int:
    cfg = _load_cli_config(ns)
    out_dir = _ensure_outdir(cfg)
    train_set, test_set = _datasets_for_seed(cfg, cfg.train.seed)
    history, net = bench.train_run_full(cfg.train, train_set, test_set)
    tag = f"{history.run_id}_seed{history.seed}"
    _atomic_write(os.path.join(out_dir, f"run_{tag}.csv"),
                  bench.history_to_csv(history))
    _atomic_write(os.path.join(out_dir, f"run_{tag}.json"),
                  bench.history_to_json(history) + "\n")
    ckpt = os.path.join(out_dir, f"checkpoint_{tag}.bin")
    save_checkpoint(f"{ckpt}.tmp", net.cfg, net.params)
    os.replace(f"{ckpt}.tmp", ckpt)
    if history.records:
        last = history.records[-1]
        print(f"{tag}: final ods_f1={last.test_ods_f1:.4f} "
              f"ois_f1={last.test_ois_f1:.4f} ({last.wall_seconds:.1f}s)")
    else:
        print(f"{tag}: empty run (0 epochs)")
    return 0


def _pgm_dir(path: str) -> list[str]:
    if not os.path.isdir(path):
        raise OSError(f"{path}: not a directory")
    names = sorted(n for n in os.listdir(path) if n.endswith(".pgm"))
    if not names:
        raise OSError(f"{path}: no .pgm files found")
    return [os.path.join(path, n) for n in names]


def cmd_eval(ns) -> int:
    cfg = _load_cli_config(ns)
    out_dir = _ensure_outdir(cfg)
    prob_files = _pgm_dir(ns.probs_dir)
    mask_files = _pgm_dir(ns.masks_dir)
    if len(prob_files) != len(mask_files):
        raise ConfigError(f"probs_dir has {len(prob_files)} rasters but masks_dir "
                          f"has {len(mask_files)}")
    probs = [load_pgm(p) for p in prob_files]
    masks = [binarize_gt(load_pgm(p)) for p in mask_files]
    report = metrics.evaluate(probs, masks, cfg.train.eval_grid)
    method = cfg.train.run_id()
    row = metrics.report_csv_row(report, method, cfg.train.spec.beta,
                                 cfg.train.spec.gamma, cfg.train.epochs)
    print(metrics.csv_header())
    print(row)
    _atomic_write(os.path.join(out_dir, "eval_report.csv"),
                  metrics.csv_header() + "\n" + row + "\n")
    _atomic_write(os.path.join(out_dir, "eval_report.json"),
                  metrics.report_json(report, method, cfg.train.spec.beta,
                                      cfg.train.spec.gamma, cfg.train.epochs) + "\n")
    return 0


def cmd_sweep(ns) -> int:
    cfg = _load_cli_config(ns)
    out_dir = _ensure_outdir(cfg)
    betas = tuple(ns.betas) if ns.betas else cfg.betas
    n_seeds = cfg.n_seeds if ns.seeds is None else ns.seeds
    baseline_cfg = replace(cfg.train, spec=replace(cfg.train.spec, family="xie"))
    provider = lambda seed: _datasets_for_seed(cfg, seed)  # noqa: E731
    reports = []
    for beta in betas:
        cand_spec = replace(cfg.train.spec, family="exp", beta=beta)
        cand_cfg = replace(cfg.train, spec=cand_spec)
        report = bench.compare(baseline_cfg, cand_cfg, n_seeds, provider)
        reports.append((beta, report))
        ett = report.candidate_epochs_to_target
        print(f"beta={beta:g}: target_f1={report.target_f1:.4f} "
              f"epochs_to_target={ett if ett is not None else 'none'} "
              f"success_fraction={report.success_fraction:.2f}")
    body = "[\n" + ",\n".join(
        f'{{"beta": {beta:g}, "report": {bench.report_to_json(rep)}}}'
        for beta, rep in reports) + "\n]\n"
    _atomic_write(os.path.join(out_dir, "sweep_report.json"), body)
    return 0


def cmd_gradcheck(ns) -> int:
    results = gradcheck.run_all()
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}: max_rel_err={r.max_rel_err:.3e} tol={r.tol:g} "
              f"n={r.instances} {status} ({r.seconds:.1f}s)")
        failed = failed or not r.passed
    if failed:
        raise NumericalError("gradient check failed; see per-suite errors above")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="path to key=value config file")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="base seed (overrides config)")
    common.add_argument("--seeds", type=int, default=argparse.SUPPRESS,
                        help="number of trial seeds for sweep")
    parser = argparse.ArgumentParser(prog="crackloss", parents=[common],
                                     description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common],
                   help="generate a synthetic dataset")
    sub.add_parser("train", parents=[common],
                   help="train one run and write history + checkpoint")
    p_eval = sub.add_parser("eval", parents=[common],
                            help="score probability maps against masks")
    p_eval.add_argument("probs_dir", help="directory of probability-map PGMs")
    p_eval.add_argument("masks_dir", help="directory of ground-truth PGMs")
    p_sweep = sub.add_parser("sweep", parents=[common],
                             help="compare exp(beta) candidates to the ratio baseline")
    p_sweep.add_argument("--betas", type=float, nargs="*", default=None,
                         help="beta values (default: the pinned sweep list)")
    sub.add_parser("gradcheck", parents=[common],
                   help="run all finite-difference gradient suites")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    for flag, default in (("config", None), ("out", None), ("seed", None),
                          ("seeds", None), ("betas", None)):
        if not hasattr(ns, flag):
            setattr(ns, flag, default)
    handlers = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
                "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}
    try:
        return handlers[ns.command](ns)
    except PgmParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
