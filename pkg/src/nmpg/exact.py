"""Brute-force ground truth and Monte Carlo estimator statistics.

The exact objective over a full logit vector is the probability-weighted sum
of per-mask mean losses over the complete product mask space; its gradient is
the score-weighted sum.  Both are only computable while the total mask count
C(M, N)^(d/M) stays small, so this module enforces a hard cap and exists for
small, fixed verification instances, not for training.

``estimator_stats`` measures the empirical mean and per-coordinate variance
of a chosen gradient estimator from independent (mask, minibatch) samples;
``optimal_delta`` computes the variance-trace-minimizing constant shift,
i.e. the score-norm-weighted expected loss residual.  The shift enters the
estimator as one global scalar, so the per-coordinate weighting is collapsed
to the squared score norm; this is the unique minimizer of the summed
per-coordinate variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import streams
from .errors import CapacityError
from .estimators import EstimatorKind
from .masks import NMMask, SparsityPattern, enumerate_masks
from .sampling import (
    GroupLogits,
    batch_grad_log_prob,
    batch_group_probs,
    sample_mask_batch,
)

MAX_TOTAL_MASKS = 10**6


def full_mask_space(pattern: SparsityPattern, n_groups: int) -> np.ndarray:
    """Every valid flat mask, shape (C(M,N)**n_groups, n_groups * M), uint8."""
    per_group = enumerate_masks(pattern)
    choices = per_group.shape[0]
    total = choices**n_groups
    if total > MAX_TOTAL_MASKS:
        raise CapacityError(
            f"{choices}^{n_groups} = {total} masks exceed the cap {MAX_TOTAL_MASKS}"
        )
    grids = np.meshgrid(*([np.arange(choices)] * n_groups), indexing="ij")
    combos = np.stack(grids, axis=-1).reshape(total, n_groups)
    return per_group[combos].reshape(total, n_groups * pattern.group_size)


def mask_space_probs(bits: np.ndarray, logits: GroupLogits) -> np.ndarray:
    """Full-mask probabilities p(m | logits) for a (T, d) mask array."""
    return batch_group_probs(bits, logits).prod(axis=1)


@dataclass(frozen=True)
class ExactObjective:
    """Exact expected loss and (optionally) its gradient in logit space."""

    value: float
    gradient: np.ndarray | None = None


def exact_phi(logits: GroupLogits, task) -> ExactObjective:
    """Expected loss under the mask distribution, by full enumeration."""
    space = full_mask_space(logits.pattern, logits.n_groups)
    p = mask_space_probs(space, logits)
    fbar = task.mean_loss_many(space)
    return ExactObjective(value=float(p @ fbar))


def exact_grad_phi(logits: GroupLogits, task) -> ExactObjective:
    """Expected loss and its exact gradient, by full enumeration."""
    space = full_mask_space(logits.pattern, logits.n_groups)
    p = mask_space_probs(space, logits)
    fbar = task.mean_loss_many(space)
    scores = batch_grad_log_prob(space, logits)
    return ExactObjective(value=float(p @ fbar), gradient=(p * fbar) @ scores)


@dataclass(frozen=True)
class EstimatorStats:
    """Empirical moments of one gradient estimator."""

    kind: EstimatorKind
    sample_count: int
    mean: np.ndarray
    variance_trace: float
    standard_error: np.ndarray
    variance_trace_se: float


def _estimator_scalars(
    kind: EstimatorKind, losses: np.ndarray, base_losses: np.ndarray, delta: float
) -> np.ndarray:
    if kind is EstimatorKind.VANILLA:
        return losses
    if kind is EstimatorKind.RESIDUAL:
        return losses - base_losses
    return losses - base_losses - delta


def _sample_losses(task, bits: np.ndarray, xi: np.ndarray) -> np.ndarray:
    losses = np.empty(bits.shape[0])
    for b in np.unique(xi):
        rows = xi == b
        losses[rows] = task.eval_loss_many(bits[rows], int(b))
    return losses


def estimator_stats(
    kind: EstimatorKind,
    logits: GroupLogits,
    task,
    baseline: NMMask,
    delta: float,
    samples: int,
    seed: int,
    variance_chunks: int = 10,
) -> EstimatorStats:
    """Monte Carlo mean/variance of one estimator from i.i.d. (mask, xi) pairs.

    The trace standard error comes from splitting the samples into
    ``variance_chunks`` fixed consecutive blocks and taking the spread of the
    per-block traces.
    """
    if samples < 1000:
        raise ValueError("estimator statistics need at least 1000 samples")
    bits = sample_mask_batch(logits, seed, samples)
    xi = streams.substream(seed, 0, 0, streams.TAG_XI).integers(
        0, task.n_minibatches, size=samples
    )
    losses = _sample_losses(task, bits, xi)
    per_batch_base = np.array(
        [task.eval_loss(baseline, b) for b in range(task.n_minibatches)]
    )
    scalars = _estimator_scalars(kind, losses, per_batch_base[xi], delta)
    g = scalars[:, None] * batch_grad_log_prob(bits, logits)

    mean = g.mean(axis=0)
    var = g.var(axis=0, ddof=1)
    chunk_traces = [
        chunk.var(axis=0, ddof=1).sum()
        for chunk in np.array_split(g, variance_chunks, axis=0)
    ]
    return EstimatorStats(
        kind=kind,
        sample_count=samples,
        mean=mean,
        variance_trace=float(var.sum()),
        standard_error=np.sqrt(var / samples),
        variance_trace_se=float(np.std(chunk_traces, ddof=1) / np.sqrt(variance_chunks)),
    )


def optimal_delta(logits: GroupLogits, task, baseline: NMMask) -> float:
    """Variance-trace-minimizing tracker value, by full enumeration.

    delta* = sum_m p(m) ||score(m)||^2 (fbar(m) - fbar(m0))
             / sum_m p(m) ||score(m)||^2.
    """
    space = full_mask_space(logits.pattern, logits.n_groups)
    p = mask_space_probs(space, logits)
    scores = batch_grad_log_prob(space, logits)
    weight = p * (scores**2).sum(axis=1)
    total = weight.sum()
    if total <= 0.0:
        return 0.0
    residuals = task.mean_loss_many(space) - task.mean_loss(baseline)
    return float((weight * residuals).sum() / total)


def converge_tracker(
    logits: GroupLogits,
    task,
    baseline: NMMask,
    alpha: float,
    steps: int,
    seed: int,
) -> float:
    """Run the moving-average residual tracker over sampled (mask, xi) pairs.

    Returns the tracker value after ``steps`` updates from delta = 0; used to
    evaluate estimator variances at a realistically converged shift.
    """
    bits = sample_mask_batch(logits, seed, steps)
    xi = streams.substream(seed, 0, 0, streams.TAG_XI).integers(
        0, task.n_minibatches, size=steps
    )
    losses = _sample_losses(task, bits, xi)
    per_batch_base = np.array(
        [task.eval_loss(baseline, b) for b in range(task.n_minibatches)]
    )
    residuals = losses - per_batch_base[xi]
    delta = 0.0
    for r in residuals:
        delta = alpha * delta + (1.0 - alpha) * float(r)
    return delta
