"""Command-line interface.

Subcommands: ``train``, ``verify``, ``variance-report``, ``memory-report``,
``c-sweep``.  Every command is deterministic given its config (seeds
included) and writes only inside its ``--out`` directory.

Exit codes: 0 success, 1 property failure, 2 bad configuration, 3 numeric
abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import verify
from .config import ConfigError, load_config, resolve_m0, build_task
from .errors import NumericError
from .estimators import (
    TrainSettings,
    extract_final_mask,
    multi_sample_select,
    train,
    write_checkpoint,
    write_records,
)
from .masks import SparsityPattern, write_mask_text
from .reports import build_c_sweep, build_variance_report, memory_report

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _out_dir(args)
    task, planted = build_task(cfg)
    settings = TrainSettings(
        kind=cfg.estimator_kind(),
        eta=cfg.eta,
        alpha=cfg.alpha,
        steps=cfg.steps,
        seed=cfg.seed,
        init_magnitude=cfg.init_magnitude,
        m0=resolve_m0(cfg, task),
        baseline_refresh=cfg.refresh,
        refresh_threshold=cfg.refresh_threshold,
    )
    try:
        state, records = train(task, settings)
    except NumericError as exc:
        (out / "abort.txt").write_text(f"{exc}\n", encoding="ascii")
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    write_checkpoint(out / "checkpoint.nmc", state)
    write_records(out / "records.tsv", records)
    if cfg.select_samples > 0:
        final = multi_sample_select(state.logits, task, cfg.select_samples, cfg.seed)
    else:
        final = extract_final_mask(state.logits)
    write_mask_text(final, out / "final_mask.nmm")

    tail = records[-min(1000, len(records)) :]
    summary = [
        f"steps = {state.step}",
        f"final_delta = {state.tracker.delta!r}",
        f"tail_mean_residual = "
        f"{(float(np.mean([r.residual for r in tail])) if tail else 0.0)!r}",
    ]
    if planted is not None:
        summary.append(f"recovery = {str(final == planted).lower()}")
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="ascii")
    print("\n".join(summary))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_scope(args.scope)
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if not failed else EXIT_PROPERTY


def cmd_variance_report(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    report = build_variance_report(cfg, _out_dir(args), plot=not args.no_plot)
    for row in report.rows:
        print(
            f"{row.kind.value}\t{row.samples}\t{row.variance_trace!r}"
            f"\t{row.max_abs_z!r}\t{'ok' if row.unbiased_3se else 'BIASED'}"
        )
    print(f"ordering smoothed<=residual: {report.ordering_sr_le_r}")
    print(f"ordering residual<0.95*vanilla: {report.ordering_r_lt_p}")
    ok = (
        report.ordering_sr_le_r
        and report.ordering_r_lt_p
        and all(r.unbiased_3se for r in report.rows)
    )
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_memory_report(args) -> int:
    report = memory_report(SparsityPattern.parse(args.pattern), args.dim)
    text = "\n".join(report.lines()) + "\n"
    print(text, end="")
    if args.out is not None:
        (_out_dir(args) / "memory_report.txt").write_text(text, encoding="ascii")
    return EXIT_OK


def cmd_c_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    c_values = [float(tok) for tok in args.c_values.split(",") if tok.strip() != ""]
    if not c_values:
        raise ConfigError("--c-values must name at least one value")
    rows = build_c_sweep(cfg, c_values, _out_dir(args), plot=not args.no_plot)
    for r in rows:
        print(
            f"C={r.c!r}\tmatch={r.match_freq!r}\tanalytic={r.match_analytic!r}"
            f"\tz={r.match_z!r}\tloss_above={r.loss_above_frac!r}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmpg",
        description="learn (N:M) sparsity masks by policy gradient over "
        "per-group categoricals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop on a configured task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run the brute-force oracle suites")
    p.add_argument(
        "--scope",
        choices=["algebra", "probability", "gradients", "unbiasedness", "all"],
        default="all",
    )
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("variance-report", help="estimator variance and bias table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_variance_report)

    p = sub.add_parser("memory-report", help="logit storage accounting")
    p.add_argument("--pattern", required=True, help="sparsity pattern, e.g. 2:4")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_memory_report)

    p = sub.add_parser("c-sweep", help="init-scale sweep of retention frequency")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c-values", required=True, help="comma list, e.g. 0,2,4,6,8,10")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_c_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
