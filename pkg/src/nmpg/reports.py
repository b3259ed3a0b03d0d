"""Report generators: estimator variance, memory accounting, init-scale sweep.

Each report writes delimited text (tab-separated, repr-format floats, fixed
row order) so identical configurations produce byte-identical files, plus an
optional PNG rendering of the same data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plots, streams
from .config import RunConfig, build_task, resolve_m0
from .estimators import EstimatorKind, TrainSettings, train, write_records
from .exact import (
    converge_tracker,
    estimator_stats,
    exact_grad_phi,
    optimal_delta,
)
from .masks import NMMask, SparsityPattern
from .sampling import GroupLogits, group_mask_prob, sample_mask_batch
from .tasks import magnitude_mask

ALL_KINDS = (EstimatorKind.VANILLA, EstimatorKind.RESIDUAL, EstimatorKind.SMOOTHED_RESIDUAL)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_table(path, header, rows) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# Memory accounting.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryReport:
    """Logit storage of per-position parameterization vs one-logit-per-choice."""

    pattern: SparsityPattern
    dim: int
    position_logit_count: int  # this library: one logit per weight
    choice_logit_count: int  # enumerating approach: C(M,N) logits per group
    ratio: float

    def lines(self) -> list[str]:
        return [
            f"pattern = {self.pattern}",
            f"dim = {self.dim}",
            f"position_logit_count = {self.position_logit_count}",
            f"choice_logit_count = {self.choice_logit_count}",
            f"ratio = {self.ratio!r}",
        ]


def memory_report(pattern: SparsityPattern, dim: int) -> MemoryReport:
    if dim % pattern.group_size != 0:
        raise ValueError(f"dim {dim} not divisible by M={pattern.group_size}")
    choices = pattern.choices_per_group
    choice_count = choices * (dim // pattern.group_size)
    return MemoryReport(
        pattern=pattern,
        dim=dim,
        position_logit_count=dim,
        choice_logit_count=choice_count,
        ratio=choice_count / dim,
    )


# ---------------------------------------------------------------------------
# Variance-ordering report.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorRow:
    kind: EstimatorKind
    samples: int
    variance_trace: float
    variance_trace_se: float
    max_abs_z: float  # max over coordinates of |MC mean - exact grad| / SE
    unbiased_3se: bool


@dataclass(frozen=True)
class VarianceReport:
    rows: tuple[EstimatorRow, ...]
    delta: float  # converged tracker value used for the smoothed estimator
    delta_star: float  # enumeration-optimal shift
    probe_deltas: tuple[float, float, float]
    probe_traces: tuple[float, float, float]
    probe_traces_se: tuple[float, float, float]
    ordering_sr_le_r: bool
    ordering_r_lt_p: bool  # with the 5%-of-Var[vanilla] margin


def build_variance_report(cfg: RunConfig, out_dir, plot: bool = True) -> VarianceReport:
    """Measure all three estimators on the configured instance and write files.

    The smoothed estimator is evaluated at a tracker value converged over
    ``cfg.tracker_steps`` sampled residuals; the optimal shift is probed at
    ``delta* - eps, delta*, delta* + eps`` to expose the quadratic shape of
    the variance in the shift.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task, planted = build_task(cfg)
    m0 = resolve_m0(cfg, task) or magnitude_mask(task.weights, task.pattern)
    logits = GroupLogits(m0.bits * cfg.init_magnitude, task.pattern)

    exact = exact_grad_phi(logits, task)
    delta = converge_tracker(logits, task, m0, cfg.alpha, cfg.tracker_steps, cfg.seed)

    rows = []
    for kind in ALL_KINDS:
        st = estimator_stats(kind, logits, task, m0, delta, cfg.samples, cfg.seed)
        z = np.abs(st.mean - exact.gradient) / st.standard_error
        rows.append(
            EstimatorRow(
                kind=kind,
                samples=cfg.samples,
                variance_trace=st.variance_trace,
                variance_trace_se=st.variance_trace_se,
                max_abs_z=float(z.max()),
                unbiased_3se=bool(z.max() <= 3.0),
            )
        )
    trace = {row.kind: row.variance_trace for row in rows}

    delta_star = optimal_delta(logits, task, m0)
    eps = 0.5 * abs(delta_star) if delta_star != 0.0 else 0.1
    probe_deltas = (delta_star - eps, delta_star, delta_star + eps)
    probe_traces = []
    probe_ses = []
    for i, d in enumerate(probe_deltas):
        st = estimator_stats(
            EstimatorKind.SMOOTHED_RESIDUAL, logits, task, m0, d, cfg.samples,
            cfg.seed + 1 + i,
        )
        probe_traces.append(st.variance_trace)
        probe_ses.append(st.variance_trace_se)

    report = VarianceReport(
        rows=tuple(rows),
        delta=delta,
        delta_star=delta_star,
        probe_deltas=probe_deltas,
        probe_traces=tuple(probe_traces),
        probe_traces_se=tuple(probe_ses),
        ordering_sr_le_r=trace[EstimatorKind.SMOOTHED_RESIDUAL]
        <= trace[EstimatorKind.RESIDUAL],
        ordering_r_lt_p=trace[EstimatorKind.RESIDUAL]
        <= 0.95 * trace[EstimatorKind.VANILLA],
    )

    _write_table(
        out / "variance_report.tsv",
        ("kind", "samples", "variance_trace", "variance_trace_se", "max_abs_z",
         "unbiased_3se"),
        [
            (r.kind.value, r.samples, r.variance_trace, r.variance_trace_se,
             r.max_abs_z, r.unbiased_3se)
            for r in report.rows
        ],
    )
    _write_table(
        out / "delta_probe.tsv",
        ("delta", "variance_trace", "variance_trace_se"),
        list(zip(report.probe_deltas, report.probe_traces, report.probe_traces_se)),
    )
    summary = [
        f"delta = {report.delta!r}",
        f"delta_star = {report.delta_star!r}",
        f"ordering_sr_le_r = {str(report.ordering_sr_le_r).lower()}",
        f"ordering_r_lt_p = {str(report.ordering_r_lt_p).lower()}",
    ]

    # Training residual curves, one short run per estimator on the same task.
    curves = {}
    for kind in ALL_KINDS:
        settings = TrainSettings(
            kind=kind,
            eta=cfg.eta,
            alpha=cfg.alpha,
            steps=cfg.steps,
            seed=cfg.seed,
            init_magnitude=cfg.init_magnitude,
            m0=m0,
        )
        _, records = train(task, settings)
        write_records(out / f"training_residuals_{kind.value}.tsv", records)
        curves[kind.value] = np.array([r.residual for r in records])
        mean_tail = float(np.mean(curves[kind.value][-max(1, len(records) // 5):]))
        summary.append(f"tail_mean_residual_{kind.value} = {mean_tail!r}")

    (out / "variance_summary.txt").write_text("\n".join(summary) + "\n", encoding="ascii")

    if plot:
        plots.plot_variance_traces(
            [r.kind.value for r in report.rows],
            [r.variance_trace for r in report.rows],
            [r.variance_trace_se for r in report.rows],
            out / "variance_traces.png",
        )
        plots.plot_residual_curves(curves, out / "residual_curves.png")
    return report


# ---------------------------------------------------------------------------
# Init-scale (C) sweep.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CSweepRow:
    c: float
    samples: int
    groups: int
    match_freq: float  # per-group frequency of re-sampling the baseline group
    match_analytic: float  # exact retention probability at this C
    match_z: float  # |freq - analytic| / binomial SE
    loss_above_frac: float  # fraction of sampled masks scoring worse than m0


def retention_probability(pattern: SparsityPattern, c: float) -> float:
    """Exact probability that one group re-samples its baseline mask at
    logits = c * baseline.  By symmetry the kept-position choice is
    irrelevant, so the first N positions stand in for any baseline group.
    """
    group = np.zeros(pattern.group_size)
    group[: pattern.n_keep] = 1.0
    return group_mask_prob(group.astype(np.uint8), group * c, pattern)


def build_c_sweep(cfg: RunConfig, c_values, out_dir, plot: bool = True) -> list[CSweepRow]:
    """Sample masks at logits = m0 * C for each C and measure retention.

    Records (a) the per-group frequency of reproducing the baseline group
    against the exact retention probability and (b) the fraction of sampled
    masks whose minibatch loss exceeds the baseline's on the same minibatch
    (the positive/negative sample balance seen by training).  Draws for
    different C values use distinct substreams (step = sweep index).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task, _ = build_task(cfg)
    m0 = resolve_m0(cfg, task) or magnitude_mask(task.weights, task.pattern)
    n_groups = task.dim // task.pattern.group_size
    m0_grouped = m0.grouped()

    rows = []
    for i, c in enumerate(c_values):
        logits = GroupLogits(m0.bits * float(c), task.pattern)
        bits = sample_mask_batch(logits, cfg.seed, cfg.samples, step=i)
        grouped = bits.reshape(cfg.samples, n_groups, task.pattern.group_size)
        matches = (grouped == m0_grouped[None, :, :]).all(axis=2)
        match_freq = float(matches.mean())
        analytic = retention_probability(task.pattern, float(c))
        n_trials = cfg.samples * n_groups
        se = math.sqrt(max(analytic * (1.0 - analytic), 1e-300) / n_trials)
        xi = streams.substream(cfg.seed, i, 0, streams.TAG_XI).integers(
            0, task.n_minibatches, size=cfg.samples
        )
        losses = np.empty(cfg.samples)
        base = np.empty(cfg.samples)
        for b in np.unique(xi):
            sel = xi == b
            losses[sel] = task.eval_loss_many(bits[sel], int(b))
            base[sel] = task.eval_loss(m0, int(b))
        rows.append(
            CSweepRow(
                c=float(c),
                samples=cfg.samples,
                groups=n_groups,
                match_freq=match_freq,
                match_analytic=analytic,
                match_z=abs(match_freq - analytic) / se,
                loss_above_frac=float((losses > base).mean()),
            )
        )

    _write_table(
        out / "c_sweep.tsv",
        ("c", "samples", "groups", "match_freq", "match_analytic", "match_z",
         "loss_above_frac"),
        [
            (r.c, r.samples, r.groups, r.match_freq, r.match_analytic, r.match_z,
             r.loss_above_frac)
            for r in rows
        ],
    )
    if plot:
        plots.plot_c_sweep(
            [r.c for r in rows],
            [r.match_freq for r in rows],
            [r.match_analytic for r in rows],
            [r.loss_above_frac for r in rows],
            out / "c_sweep.png",
        )
    return rows
