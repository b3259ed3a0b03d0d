"""Per-group categorical sampling and exact mask probabilities.

A flat logit vector of length ``d`` is interpreted as ``d/M`` independent
groups of ``M`` logits.  Softmax turns each group into a categorical
distribution over positions; a mask is generated by drawing ``N`` distinct
positions per group *sequentially*, removing each drawn position's mass and
renormalizing the remainder (sampling without replacement).

The probability of a given group mask is the sum, over all ``N!`` orders in
which its positions could have been drawn, of the product of the sequential
draw probabilities.  The score ``d log p / d logits`` has a closed form with
two parts per draw order: a product-rule term ``1[k selected] - N * psi_k``
shared by all orders, and a renormalization term involving, for each draw
step, the inverse of the remaining mass.  Both are computed exactly here
(cost ``N! * N`` per group), which is why ``N`` is capped at 6.

Numerical conventions: softmax subtracts the per-group maximum before
exponentiating; renormalization denominators are floored at 1e-12 and
probabilities at 1e-300 before taking logs, so degenerate logits can never
divide by zero or return -inf.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import streams
from .errors import CapacityError, NumericError
from .masks import NMMask, SparsityPattern

DENOM_FLOOR = 1e-12
PROB_FLOOR = 1e-300

# N! permutation sums:  6! = 720 orders per group is the accepted ceiling.
MAX_SEQUENTIAL_KEEP = 6


@dataclass(frozen=True)
class GroupLogits:
    """Flat real logits of length d, grouped into d/M softmax groups."""

    values: np.ndarray
    pattern: SparsityPattern

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.values), dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"logits must be one-dimensional, got shape {arr.shape}")
        m = self.pattern.group_size
        if arr.size == 0 or arr.size % m != 0:
            raise ValueError(f"dimension {arr.size} is not a positive multiple of M={m}")
        if not np.isfinite(arr).all():
            raise NumericError("logits contain non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def n_groups(self) -> int:
        return self.dim // self.pattern.group_size

    def grouped(self) -> np.ndarray:
        """Read-only (n_groups, M) view."""
        return self.values.reshape(self.n_groups, self.pattern.group_size)

    def replace_values(self, values: np.ndarray) -> "GroupLogits":
        return GroupLogits(values, self.pattern)


def softmax_group(logits_group: np.ndarray) -> np.ndarray:
    """Stable softmax of one logit group; entries >= 0 and sum to 1."""
    v = np.asarray(logits_group, dtype=np.float64)
    if not np.isfinite(v).all():
        raise NumericError("softmax input contains non-finite entries")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def group_softmax(logits: GroupLogits) -> np.ndarray:
    """Softmax probabilities for every group, shape (n_groups, M)."""
    return softmax_group(logits.grouped())


# ---------------------------------------------------------------------------
# Sampling without replacement.
# ---------------------------------------------------------------------------


def _sequential_draws(psi: np.ndarray, u: np.ndarray, n_keep: int) -> np.ndarray:
    """Vectorized sequential without-replacement draws.

    ``psi`` has shape (rows, M) with rows summing to 1, ``u`` shape
    (rows, n_keep) of uniforms.  Draw j picks position k with probability
    ``psi_k / (1 - sum of previously drawn psi)``, the denominator floored at
    DENOM_FLOOR.  Returns picked indices, shape (rows, n_keep).
    """
    rows, m = psi.shape
    w = psi.copy()
    undrawn = np.ones((rows, m), dtype=bool)
    drawn_mass = np.zeros(rows)
    ridx = np.arange(rows)
    cols = np.arange(m)
    picks = np.empty((rows, n_keep), dtype=np.intp)
    for j in range(n_keep):
        denom = np.maximum(1.0 - drawn_mass, DENOM_FLOOR)
        x = u[:, j] * denom
        cum = np.cumsum(w, axis=1)
        k = np.minimum((cum <= x[:, None]).sum(axis=1), m - 1)
        # searchsorted-right never lands on zero mass below the top, but the
        # floored denominator can push x past the total remaining mass; fall
        # back to the highest positive-mass position, or (if underflow zeroed
        # every remaining position) the lowest undrawn index.
        bad = w[ridx, k] <= 0.0
        if bad.any():
            has_pos = (w > 0.0).any(axis=1)
            last_pos = np.where(w > 0.0, cols[None, :], -1).max(axis=1)
            first_undrawn = np.where(undrawn, cols[None, :], m).min(axis=1)
            k = np.where(bad & has_pos, last_pos, k)
            k = np.where(bad & ~has_pos, first_undrawn, k)
        picks[:, j] = k
        drawn_mass = drawn_mass + psi[ridx, k]
        w[ridx, k] = 0.0
        undrawn[ridx, k] = False
    return picks


def sample_mask(logits: GroupLogits, seed: int, step: int) -> NMMask:
    """Draw one mask; group ``g`` uses the substream ``(seed, step, g)``."""
    pattern = logits.pattern
    n, m = pattern.n_keep, pattern.group_size
    probs = group_softmax(logits)
    bits = np.zeros(logits.dim, dtype=np.uint8)
    for g in range(logits.n_groups):
        u = streams.substream(seed, step, g, streams.TAG_MASK).random((1, n))
        picks = _sequential_draws(probs[g : g + 1], u, n)
        bits[g * m + picks[0]] = 1
    return NMMask(bits, pattern)


def sample_mask_batch(
    logits: GroupLogits, seed: int, count: int, step: int = 0, tag: int = streams.TAG_BATCH
) -> np.ndarray:
    """Draw ``count`` independent masks, vectorized; returns (count, d) uint8.

    The whole batch shares the base ``step``: group ``g`` draws its
    (count, N) uniform block from the single substream ``(seed, step, g)``.
    Same sampling law as :func:`sample_mask`, but not the same stream
    layout, so the two paths are equal in distribution, not bitwise.
    """
    pattern = logits.pattern
    n, m = pattern.n_keep, pattern.group_size
    probs = group_softmax(logits)
    bits = np.zeros((count, logits.dim), dtype=np.uint8)
    rows = np.arange(count)
    for g in range(logits.n_groups):
        u = streams.substream(seed, step, g, tag).random((count, n))
        picks = _sequential_draws(np.broadcast_to(probs[g], (count, m)).copy(), u, n)
        for j in range(n):
            bits[rows, g * m + picks[:, j]] = 1
    return bits


# ---------------------------------------------------------------------------
# Exact probabilities and the closed-form score.
# ---------------------------------------------------------------------------


def _as_grouped_bits(bits: np.ndarray, pattern: SparsityPattern) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8)
    m = pattern.group_size
    if arr.shape[-1] % m != 0:
        raise ValueError(f"mask dimension {arr.shape[-1]} not a multiple of M={m}")
    grouped = arr.reshape(arr.shape[:-1] + (arr.shape[-1] // m, m))
    if not (grouped.sum(axis=-1) == pattern.n_keep).all():
        raise ValueError(f"mask has a group without exactly {pattern.n_keep} ones")
    return grouped


def _permutation_sum(
    bits_grouped: np.ndarray, probs: np.ndarray, n_keep: int, want_score: bool
):
    """Shared kernel: per-group probability and (optionally) the score.

    ``bits_grouped``: (..., G, M) 0/1; ``probs``: broadcastable (..., G, M).
    Returns ``(p, score)`` with shapes (..., G) and (..., G, M).
    """
    m = bits_grouped.shape[-1]
    if n_keep == m:
        # Single admissible mask per group: probability one, flat score.
        p = np.ones(bits_grouped.shape[:-1])
        score = np.zeros(np.broadcast_shapes(bits_grouped.shape, probs.shape))
        return p, (score if want_score else None)
    if n_keep > MAX_SEQUENTIAL_KEEP:
        raise CapacityError(
            f"N={n_keep} exceeds the permutation-sum cap {MAX_SEQUENTIAL_KEEP}"
        )

    # Positions of the ones per group, ascending (stable sort on 1 - bits).
    sel = np.argsort(1 - bits_grouped, axis=-1, kind="stable")[..., :n_keep]
    probs = np.broadcast_to(probs, bits_grouped.shape)

    p = np.zeros(bits_grouped.shape[:-1])
    sum_pt = np.zeros_like(p) if want_score else None
    scatter = np.zeros(bits_grouped.shape) if want_score else None

    for tau in permutations(range(n_keep)):
        order = sel[..., list(tau)]
        psi = np.take_along_axis(probs, order, axis=-1)
        cum = np.cumsum(psi, axis=-1)
        prefix = cum - psi  # drawn mass before each step; 0 at step 1
        denom = np.maximum(1.0 - prefix, DENOM_FLOOR)
        ratios = psi / denom
        p_tau = ratios.prod(axis=-1)
        p += p_tau
        if want_score:
            inv = 1.0 / denom
            # suffix[j] = sum of inv over later draw steps
            rev = np.flip(np.cumsum(np.flip(inv, -1), axis=-1), -1)
            suffix = rev - inv
            t_tau = (prefix * inv).sum(axis=-1)
            tmp = np.zeros(bits_grouped.shape)
            np.put_along_axis(tmp, order, p_tau[..., None] * suffix, axis=-1)
            scatter += tmp
            sum_pt += p_tau * t_tau

    if not want_score:
        return p, None
    p_safe = np.maximum(p, PROB_FLOOR)
    score = (bits_grouped - n_keep * probs) + probs * (
        scatter - sum_pt[..., None]
    ) / p_safe[..., None]
    return p, score


def group_mask_prob(
    mask_group: np.ndarray, logits_group: np.ndarray, pattern: SparsityPattern
) -> float:
    """Exact probability of one group mask under one group of logits."""
    bits = _as_grouped_bits(np.asarray(mask_group), pattern)
    probs = softmax_group(np.asarray(logits_group, dtype=np.float64)).reshape(bits.shape)
    p, _ = _permutation_sum(bits, probs, pattern.n_keep, want_score=False)
    return float(p[0])


def mask_group_probs(mask: NMMask, logits: GroupLogits) -> np.ndarray:
    """Per-group probabilities of a full mask, shape (n_groups,)."""
    _check_compatible(mask, logits)
    bits = _as_grouped_bits(mask.bits, mask.pattern)
    p, _ = _permutation_sum(bits, group_softmax(logits), mask.pattern.n_keep, False)
    return p


def batch_group_probs(bits: np.ndarray, logits: GroupLogits) -> np.ndarray:
    """Per-group probabilities for a (count, d) batch of masks: (count, G)."""
    grouped = _as_grouped_bits(bits, logits.pattern)
    probs = group_softmax(logits)[None, ...]
    p, _ = _permutation_sum(grouped, probs, logits.pattern.n_keep, False)
    return p


def log_prob(mask: NMMask, logits: GroupLogits) -> float:
    """log p(mask | logits): sum of per-group log probabilities, never -inf."""
    p = mask_group_probs(mask, logits)
    return float(np.log(np.maximum(p, PROB_FLOOR)).sum())


def batch_log_probs(bits: np.ndarray, logits: GroupLogits) -> np.ndarray:
    p = batch_group_probs(bits, logits)
    return np.log(np.maximum(p, PROB_FLOOR)).sum(axis=-1)


def grad_log_prob(mask: NMMask, logits: GroupLogits) -> np.ndarray:
    """Closed-form score d log p(mask|logits) / d logits, length d.

    Within each group the coordinates sum to zero (softmax shift
    invariance), up to roundoff.
    """
    _check_compatible(mask, logits)
    bits = _as_grouped_bits(mask.bits, mask.pattern)
    _, score = _permutation_sum(bits, group_softmax(logits), mask.pattern.n_keep, True)
    return score.reshape(logits.dim)


def batch_grad_log_prob(bits: np.ndarray, logits: GroupLogits) -> np.ndarray:
    """Scores for a (count, d) batch of masks: (count, d)."""
    grouped = _as_grouped_bits(bits, logits.pattern)
    probs = group_softmax(logits)[None, ...]
    _, score = _permutation_sum(grouped, probs, logits.pattern.n_keep, True)
    return score.reshape(bits.shape[0], logits.dim)


def _check_compatible(mask: NMMask, logits: GroupLogits) -> None:
    if mask.pattern != logits.pattern or mask.dim != logits.dim:
        raise ValueError(
            f"mask ({mask.pattern}, d={mask.dim}) incompatible with "
            f"logits ({logits.pattern}, d={logits.dim})"
        )
