"""Forward-only toy objectives with known structure.

Every task freezes a weight vector ``w`` and exposes pure loss evaluations
``f(mask * w, minibatch)``; nothing here ever computes a gradient through the
weights.  The planted constructions know their own optimal mask, which makes
end-to-end mask recovery checkable:

* planted linear regression: targets come from ``(m* . w)^T x``, so the
  planted mask is the unique zero-loss minimizer in the noiseless case;
* a tiny two-layer perceptron whose first-layer weights are masked, with
  regression targets from a wider teacher network (nonconvex stand-in);
* a confined wrapper that affinely rescales a base task's losses into a
  fixed range (used to place every mask/minibatch pair inside the regime
  where residual-based updates provably reduce variance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import streams
from .exact import MAX_TOTAL_MASKS, full_mask_space
from .masks import NMMask, SparsityPattern, top_n_mask

# Construction-time identifiability checks enumerate the full mask product
# space when it is small enough; larger instances fall back to a
# positive-definiteness argument.
ENUM_CHECK_LIMIT = 50_000
_TIE_GAP = 1e-9


def _bits_of(mask) -> np.ndarray:
    if isinstance(mask, NMMask):
        return mask.bits
    return np.asarray(mask, dtype=np.uint8)


class ToyTask:
    """Base class: frozen weights, an ordered minibatch list, pure loss evals."""

    def __init__(self, weights, pattern: SparsityPattern, loss_kind: str,
                 n_minibatches: int, calibration_ids=(0,)):
        w = np.ascontiguousarray(np.asarray(weights), dtype=np.float64)
        if w.ndim != 1 or w.size % pattern.group_size != 0:
            raise ValueError("weights must be flat with length divisible by M")
        w.setflags(write=False)
        self.weights = w
        self.pattern = pattern
        self.loss_kind = loss_kind
        self.n_minibatches = int(n_minibatches)
        self.calibration_ids = tuple(calibration_ids)
        if self.n_minibatches < 1:
            raise ValueError("a task needs at least one minibatch")
        for c in self.calibration_ids:
            if not (0 <= c < self.n_minibatches):
                raise ValueError(f"calibration id {c} out of range")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def _check_batch(self, minibatch_id: int) -> None:
        if not (0 <= minibatch_id < self.n_minibatches):
            raise ValueError(
                f"minibatch id {minibatch_id} outside [0, {self.n_minibatches})"
            )

    def eval_loss_many(self, bits: np.ndarray, minibatch_id: int) -> np.ndarray:
        """Losses for a (count, d) batch of masks on one minibatch."""
        raise NotImplementedError

    def eval_loss(self, mask, minibatch_id: int) -> float:
        bits = _bits_of(mask)
        return float(self.eval_loss_many(bits[None, :], minibatch_id)[0])

    def mean_loss_many(self, bits: np.ndarray) -> np.ndarray:
        """Loss averaged over the full dataset (exact minibatch expectation)."""
        acc = np.zeros(bits.shape[0])
        for b in range(self.n_minibatches):
            acc += self.eval_loss_many(bits, b)
        return acc / self.n_minibatches

    def mean_loss(self, mask) -> float:
        return float(self.mean_loss_many(_bits_of(mask)[None, :])[0])

    def calibration_loss_many(self, bits: np.ndarray) -> np.ndarray:
        acc = np.zeros(bits.shape[0])
        for b in self.calibration_ids:
            acc += self.eval_loss_many(bits, b)
        return acc / len(self.calibration_ids)


def _contiguous_batches(n_samples: int, batch_size: int) -> list[tuple[int, int]]:
    if batch_size < 1 or n_samples % batch_size != 0:
        raise ValueError(
            f"batch size {batch_size} must divide the sample count {n_samples}"
        )
    return [(i, i + batch_size) for i in range(0, n_samples, batch_size)]


class LinearTask(ToyTask):
    """Mean squared error (or binary cross-entropy) of ``(m*w)^T x`` vs targets."""

    def __init__(self, weights, pattern, inputs, targets, batch_size, loss_kind="squared-error",
                 calibration_ids=(0,)):
        X = np.ascontiguousarray(np.asarray(inputs), dtype=np.float64)
        y = np.ascontiguousarray(np.asarray(targets), dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(weights) or X.shape[0] != y.shape[0]:
            raise ValueError("inputs must be (n_samples, d) aligned with targets")
        if loss_kind not in ("squared-error", "cross-entropy"):
            raise ValueError(f"unsupported loss kind {loss_kind!r}")
        self._X = X
        self._y = y
        self._bounds = _contiguous_batches(X.shape[0], batch_size)
        super().__init__(weights, pattern, loss_kind, len(self._bounds), calibration_ids)

    def eval_loss_many(self, bits, minibatch_id):
        self._check_batch(minibatch_id)
        lo, hi = self._bounds[minibatch_id]
        preds = (bits * self.weights) @ self._X[lo:hi].T  # (count, batch)
        if self.loss_kind == "squared-error":
            return np.mean((preds - self._y[lo:hi]) ** 2, axis=1)
        # cross-entropy on sigmoid outputs against 0/1 targets, clamped away
        # from the log singularities
        p = 1.0 / (1.0 + np.exp(-preds))
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
        y = self._y[lo:hi]
        return -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p), axis=1)


class MlpTask(ToyTask):
    """Two-layer tanh perceptron; only the first-layer weights are masked."""

    def __init__(self, first_layer, second_layer, pattern, inputs, targets, batch_size,
                 calibration_ids=(0,)):
        W1 = np.asarray(first_layer, dtype=np.float64)
        w2 = np.asarray(second_layer, dtype=np.float64)
        if W1.ndim != 2 or w2.shape != (W1.shape[0],):
            raise ValueError("need first_layer (h, in) and second_layer (h,)")
        self._shape = W1.shape
        self._w2 = w2
        self._X = np.asarray(inputs, dtype=np.float64)
        self._y = np.asarray(targets, dtype=np.float64)
        self._bounds = _contiguous_batches(self._X.shape[0], batch_size)
        super().__init__(W1.reshape(-1), pattern, "squared-error",
                         len(self._bounds), calibration_ids)

    def eval_loss_many(self, bits, minibatch_id):
        self._check_batch(minibatch_id)
        lo, hi = self._bounds[minibatch_id]
        X = self._X[lo:hi]
        W1m = (bits * self.weights).reshape(bits.shape[0], *self._shape)
        z = np.einsum("bi,shi->sbh", X, W1m)
        preds = np.tanh(z) @ self._w2
        return np.mean((preds - self._y[lo:hi]) ** 2, axis=1)


class WeightDistanceTask(ToyTask):
    """Loss = squared norm of the pruned-away weights; one fixed minibatch."""

    def __init__(self, weights, pattern):
        super().__init__(weights, pattern, "squared-error", 1)

    def eval_loss_many(self, bits, minibatch_id):
        self._check_batch(minibatch_id)
        return (((1 - bits) * self.weights) ** 2).sum(axis=1)


class ConstantTask(ToyTask):
    """Every mask and minibatch scores the same constant (oracle fixture)."""

    def __init__(self, value, pattern, dim, n_minibatches=1):
        super().__init__(np.zeros(dim), pattern, "squared-error", n_minibatches)
        self.value = float(value)

    def eval_loss_many(self, bits, minibatch_id):
        self._check_batch(minibatch_id)
        return np.full(bits.shape[0], self.value)


class ConfinedLossTask(ToyTask):
    """Affine rescale of a base task so every (mask, minibatch) loss lies in [lo, hi].

    The extremes are found by full enumeration at construction, so the bound
    is exact, not approximate.
    """

    def __init__(self, base: ToyTask, lo: float = 1.0, hi: float = 2.0):
        if not lo < hi:
            raise ValueError("need lo < hi")
        total = base.pattern.choices_per_group ** (base.dim // base.pattern.group_size)
        if total > ENUM_CHECK_LIMIT:
            raise ValueError(
                f"confined wrapper needs full enumeration; {total} masks exceed "
                f"{ENUM_CHECK_LIMIT}"
            )
        space = full_mask_space(base.pattern, base.dim // base.pattern.group_size)
        per_batch = np.stack(
            [base.eval_loss_many(space, b) for b in range(base.n_minibatches)]
        )
        self._base = base
        self._lo, self._hi = float(lo), float(hi)
        self._bmin = float(per_batch.min())
        self._bmax = float(per_batch.max())
        super().__init__(base.weights, base.pattern, base.loss_kind,
                         base.n_minibatches, base.calibration_ids)

    def eval_loss_many(self, bits, minibatch_id):
        raw = self._base.eval_loss_many(bits, minibatch_id)
        if self._bmax == self._bmin:
            return np.full_like(raw, 0.5 * (self._lo + self._hi))
        frac = (raw - self._bmin) / (self._bmax - self._bmin)
        return self._lo + (self._hi - self._lo) * frac


@dataclass(frozen=True)
class PlantedInstance:
    """A task plus the mask it was built around."""

    task: ToyTask
    planted_mask: NMMask
    noise_level: float


def magnitude_mask(weights, pattern: SparsityPattern) -> NMMask:
    """Keep the N largest-|w| positions per group; ties go to the lowest index."""
    w = np.asarray(weights, dtype=np.float64)
    return NMMask(top_n_mask(np.abs(w), pattern), pattern)


def _random_nm_bits(rng, pattern: SparsityPattern, n_groups: int) -> np.ndarray:
    m, n = pattern.group_size, pattern.n_keep
    bits = np.zeros(n_groups * m, dtype=np.uint8)
    for g in range(n_groups):
        keep = rng.permutation(m)[:n]
        bits[g * m + keep] = 1
    return bits


def random_mask(pattern: SparsityPattern, dim: int, seed: int) -> NMMask:
    """Uniformly random valid mask (one independent choice per group)."""
    rng = streams.substream(seed, 0, 0, streams.TAG_DATA)
    return NMMask(_random_nm_bits(rng, pattern, dim // pattern.group_size), pattern)


def make_planted_linear(
    dim: int,
    pattern: SparsityPattern,
    n_samples: int,
    noise_level: float,
    seed: int,
    batch_size: int | None = None,
    loss_kind: str = "squared-error",
    min_gap: float = 0.0,
    calibration_batches: int = 1,
    max_attempts: int = 64,
    weight_band: tuple[float, float] = (0.75, 1.25),
) -> PlantedInstance:
    """Planted-mask linear regression with verified identifiability.

    Weight magnitudes are drawn uniformly from ``weight_band`` with random
    signs, so every coordinate carries signal and any wrong mask pays at
    least twice the squared band floor; this uniform floor replaces a
    conditional per-group magnitude bump and gives the same guarantee, while
    the narrow band keeps per-swap loss gaps comparable across groups.
    Small instances are checked by enumerating the full mask space (unique
    argmin with margin ``min_gap``); larger ones require n_samples >= dim
    and a positive definite empirical second moment, under which the planted
    mask is the unique zero of the noiseless objective.  Failing draws are
    retried from the next attempt substream, deterministically.
    """
    if dim % pattern.group_size != 0:
        raise ValueError(f"dim {dim} not divisible by M={pattern.group_size}")
    if not (0 < weight_band[0] <= weight_band[1]):
        raise ValueError(f"weight band must satisfy 0 < lo <= hi, got {weight_band}")
    n_groups = dim // pattern.group_size
    if batch_size is None:
        batch_size = n_samples
    total_masks = pattern.choices_per_group ** n_groups
    enumerable = total_masks <= ENUM_CHECK_LIMIT

    for attempt in range(max_attempts):
        rng = streams.substream(seed, attempt, 0, streams.TAG_DATA)
        w = rng.uniform(weight_band[0], weight_band[1], dim) * np.where(
            rng.random(dim) < 0.5, -1.0, 1.0
        )
        bits = _random_nm_bits(rng, pattern, n_groups)
        planted = NMMask(bits, pattern)
        X = rng.standard_normal((n_samples, dim))
        clean = X @ (bits * w)
        if loss_kind == "cross-entropy":
            y = (clean + noise_level * rng.standard_normal(n_samples) > 0).astype(float)
        else:
            y = clean + noise_level * rng.standard_normal(n_samples)
        task = LinearTask(
            w, pattern, X, y, batch_size, loss_kind,
            calibration_ids=tuple(range(min(calibration_batches, n_samples // batch_size))),
        )
        if enumerable:
            space = full_mask_space(pattern, n_groups)
            losses = task.mean_loss_many(space)
            best = int(np.argmin(losses))
            others = np.delete(losses, best)
            gap = float(others.min() - losses[best])
            if np.array_equal(space[best], bits) and gap >= max(min_gap, _TIE_GAP):
                return PlantedInstance(task, planted, noise_level)
        else:
            if n_samples < dim:
                raise ValueError(
                    f"non-enumerable instance needs n_samples >= dim "
                    f"({n_samples} < {dim})"
                )
            second_moment = X.T @ X / n_samples
            lam_min = float(np.linalg.eigvalsh(second_moment)[0])
            # any wrong mask differs from the planted one in >= 2 coordinates,
            # each of weight magnitude >= the band floor
            gap = lam_min * 2 * weight_band[0] ** 2
            if lam_min > 0 and gap >= min_gap:
                return PlantedInstance(task, planted, noise_level)
    raise RuntimeError(
        f"no identifiable planted instance found in {max_attempts} attempts "
        f"(seed {seed}, min_gap {min_gap})"
    )


def make_mlp_task(
    dim: int,
    pattern: SparsityPattern,
    hidden_width: int,
    n_samples: int,
    seed: int,
    batch_size: int | None = None,
) -> ToyTask:
    """Fixed random two-layer perceptron with targets from a wider teacher."""
    if hidden_width < 1:
        raise ValueError("hidden width must be positive")
    if dim % hidden_width != 0:
        raise ValueError(f"dim {dim} must be hidden_width * input_width")
    if dim % pattern.group_size != 0:
        raise ValueError(f"dim {dim} not divisible by M={pattern.group_size}")
    in_width = dim // hidden_width
    if batch_size is None:
        batch_size = n_samples
    rng = streams.substream(seed, 0, 0, streams.TAG_DATA)
    W1 = rng.standard_normal((hidden_width, in_width)) / np.sqrt(in_width)
    w2 = rng.standard_normal(hidden_width) / np.sqrt(hidden_width)
    T1 = rng.standard_normal((2 * hidden_width, in_width)) / np.sqrt(in_width)
    t2 = rng.standard_normal(2 * hidden_width) / np.sqrt(2 * hidden_width)
    X = rng.standard_normal((n_samples, in_width))
    y = np.tanh(X @ T1.T) @ t2
    return MlpTask(W1, w2, pattern, X, y, batch_size)
