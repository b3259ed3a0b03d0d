"""Gradient estimators, the moving-average residual tracker, and the trainer.

Three estimators share the score vector of the sampled mask and differ only
in the scalar that multiplies it:

* vanilla:            loss itself;
* residual:           loss minus the loss of a fixed baseline mask on the
                      same minibatch (cancels minibatch-to-minibatch level
                      differences);
* smoothed residual:  the residual minus a moving-average tracker of past
                      residuals (centers the scalar near zero).

One training step samples a minibatch and a mask, evaluates both losses
forward-only, forms the chosen estimator, applies plain gradient descent to
the logits, then updates the tracker.  The baseline loss depends only on
(baseline mask, minibatch), both fixed, so it is memoized per minibatch id;
the cached value is bitwise identical to a recomputation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import streams
from .errors import NumericError
from .masks import NMMask, SparsityPattern, top_n_mask
from .sampling import GroupLogits, grad_log_prob, sample_mask


class EstimatorKind(enum.Enum):
    VANILLA = "vanilla"
    RESIDUAL = "residual"
    SMOOTHED_RESIDUAL = "smoothed-residual"

    @classmethod
    def parse(cls, text: str) -> "EstimatorKind":
        for kind in cls:
            if kind.value == text:
                return kind
        raise ValueError(
            f"unknown estimator {text!r}; expected one of "
            f"{[k.value for k in cls]}"
        )


@dataclass(frozen=True)
class SmoothingTracker:
    """Moving average of loss residuals with decay ``alpha``."""

    delta: float = 0.0
    alpha: float = 0.99

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not np.isfinite(self.delta):
            raise NumericError(f"tracker value is not finite: {self.delta}")


def update_tracker(tracker: SmoothingTracker, residual: float) -> SmoothingTracker:
    new_delta = tracker.alpha * tracker.delta + (1.0 - tracker.alpha) * residual
    return SmoothingTracker(delta=new_delta, alpha=tracker.alpha)


def init_logits(m0: NMMask, magnitude: float) -> GroupLogits:
    """Start logits at ``magnitude`` on the kept positions, 0 elsewhere."""
    if not np.isfinite(magnitude):
        raise NumericError(f"init magnitude is not finite: {magnitude}")
    return GroupLogits(m0.bits * float(magnitude), m0.pattern)


@dataclass(frozen=True)
class StepRecord:
    """One training step; ``delta`` is the tracker value the update used."""

    step: int
    minibatch_id: int
    loss: float
    baseline_loss: float
    residual: float
    delta: float


def estimate(
    kind: EstimatorKind,
    record: StepRecord,
    score: np.ndarray,
    tracker: SmoothingTracker,
) -> np.ndarray:
    """Gradient estimate: a kind-dependent scalar times the score vector."""
    if not (np.isfinite(record.loss) and np.isfinite(record.baseline_loss)):
        raise NumericError(
            f"non-finite loss at step {record.step}: loss={record.loss}, "
            f"baseline={record.baseline_loss}"
        )
    if kind is EstimatorKind.VANILLA:
        scalar = record.loss
    elif kind is EstimatorKind.RESIDUAL:
        scalar = record.residual
    else:
        scalar = record.residual - tracker.delta
    return scalar * score


@dataclass(frozen=True)
class TrainerState:
    logits: GroupLogits
    tracker: SmoothingTracker
    baseline_mask: NMMask
    step: int
    learning_rate: float
    rng_seed: int


def apply_update(state: TrainerState, gradient_estimate: np.ndarray) -> TrainerState:
    with np.errstate(over="ignore", invalid="ignore"):
        new_values = state.logits.values - state.learning_rate * gradient_estimate
    if not np.isfinite(new_values).all():
        raise NumericError(
            f"logits became non-finite at step {state.step} "
            f"(eta={state.learning_rate})"
        )
    return replace(state, logits=state.logits.replace_values(new_values),
                   step=state.step + 1)


def extract_final_mask(logits: GroupLogits) -> NMMask:
    """Keep the N highest-logit positions per group (lowest index on ties)."""
    return NMMask(top_n_mask(logits.values, logits.pattern), logits.pattern)


def multi_sample_select(logits: GroupLogits, task, k: int, seed: int) -> NMMask:
    """Draw k masks and return the one with the lowest calibration loss.

    Candidate i is exactly ``sample_mask(logits, seed, step=i)``, so k = 1
    reproduces a single draw.  Ties keep the earliest candidate.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    best_mask = None
    best_loss = np.inf
    for i in range(k):
        mask = sample_mask(logits, seed, i)
        loss = float(task.calibration_loss_many(mask.bits[None, :])[0])
        if loss < best_loss:
            best_mask, best_loss = mask, loss
    return best_mask


@dataclass(frozen=True)
class TrainSettings:
    kind: EstimatorKind
    eta: float
    steps: int
    seed: int
    alpha: float = 0.99
    init_magnitude: float = 10.0
    m0: NMMask | None = None  # default: magnitude mask of the task weights
    baseline_refresh: bool = False
    refresh_threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")


def _epoch_order(seed: int, epoch: int, n_minibatches: int) -> np.ndarray:
    return streams.substream(seed, epoch, 0, streams.TAG_SHUFFLE).permutation(
        n_minibatches
    )


def train(task, settings: TrainSettings) -> tuple[TrainerState, list[StepRecord]]:
    """Run the full training loop; deterministic given the settings seed.

    Per step: pick the minibatch (cyclic over the dataset, reshuffled every
    epoch), sample a mask from the current per-group softmax, evaluate the
    sampled and baseline losses, apply the chosen estimator to the logits,
    then update the tracker.  Optionally, when the smoothed residual crosses
    ``refresh_threshold`` (from above), the baseline mask is replaced by the
    current top-N extraction and the tracker restarts at zero; off by
    default.
    """
    if settings.m0 is not None:
        m0 = settings.m0
    else:
        m0 = NMMask(top_n_mask(np.abs(task.weights), task.pattern), task.pattern)
    state = TrainerState(
        logits=init_logits(m0, settings.init_magnitude),
        tracker=SmoothingTracker(0.0, settings.alpha),
        baseline_mask=m0,
        step=0,
        learning_rate=settings.eta,
        rng_seed=settings.seed,
    )
    records: list[StepRecord] = []
    baseline_cache: dict[int, float] = {}
    n_mb = task.n_minibatches
    order = _epoch_order(settings.seed, 0, n_mb)

    for t in range(settings.steps):
        if t % n_mb == 0 and t > 0:
            order = _epoch_order(settings.seed, t // n_mb, n_mb)
        b = int(order[t % n_mb])

        mask = sample_mask(state.logits, settings.seed, t)
        loss = task.eval_loss(mask, b)
        base = baseline_cache.get(b)
        if base is None:
            base = task.eval_loss(state.baseline_mask, b)
            baseline_cache[b] = base
        record = StepRecord(
            step=t,
            minibatch_id=b,
            loss=loss,
            baseline_loss=base,
            residual=loss - base,
            delta=state.tracker.delta,
        )
        records.append(record)

        score = grad_log_prob(mask, state.logits)
        g = estimate(settings.kind, record, score, state.tracker)
        state = apply_update(state, g)
        state = replace(state, tracker=update_tracker(state.tracker, record.residual))

        if settings.baseline_refresh and state.tracker.delta <= settings.refresh_threshold:
            new_m0 = extract_final_mask(state.logits)
            if new_m0 != state.baseline_mask:
                state = replace(
                    state,
                    baseline_mask=new_m0,
                    tracker=SmoothingTracker(0.0, settings.alpha),
                )
                baseline_cache.clear()
    return state, records


# ---------------------------------------------------------------------------
# Checkpoint and step-record files.
#
# Checkpoint: ASCII header lines, then the flat logits as little-endian
# float64 bytes.  Records: one tab-separated line per step with a fixed
# field order; floats use repr (shortest round-trip), so files are
# byte-stable across identical runs.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "NMPG-CHECKPOINT 1"
RECORD_FIELDS = ("step", "minibatch_id", "loss", "baseline_loss", "residual", "delta")


@dataclass(frozen=True)
class Checkpoint:
    pattern: SparsityPattern
    step: int
    eta: float
    alpha: float
    delta: float
    seed: int
    logits: np.ndarray


def write_checkpoint(path, state: TrainerState) -> None:
    header = "\n".join(
        [
            CHECKPOINT_MAGIC,
            f"pattern {state.logits.pattern}",
            f"dim {state.logits.dim}",
            f"step {state.step}",
            f"eta {state.learning_rate!r}",
            f"alpha {state.tracker.alpha!r}",
            f"delta {state.tracker.delta!r}",
            f"seed {state.rng_seed}",
            "logits float64-le",
            "",
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(state.logits.values.astype("<f8").tobytes())


def read_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    marker = b"logits float64-le\n"
    cut = blob.find(marker)
    if cut < 0 or not blob.startswith(CHECKPOINT_MAGIC.encode("ascii")):
        raise ValueError(f"{path} is not a checkpoint file")
    fields = {}
    for line in blob[:cut].decode("ascii").splitlines()[1:]:
        key, value = line.split(" ", 1)
        fields[key] = value
    logits = np.frombuffer(blob[cut + len(marker) :], dtype="<f8").astype(np.float64)
    if logits.size != int(fields["dim"]):
        raise ValueError(
            f"checkpoint dim {fields['dim']} does not match payload {logits.size}"
        )
    return Checkpoint(
        pattern=SparsityPattern.parse(fields["pattern"]),
        step=int(fields["step"]),
        eta=float(fields["eta"]),
        alpha=float(fields["alpha"]),
        delta=float(fields["delta"]),
        seed=int(fields["seed"]),
        logits=logits,
    )


def records_to_text(records) -> str:
    lines = ["\t".join(RECORD_FIELDS)]
    for r in records:
        lines.append(
            f"{r.step}\t{r.minibatch_id}\t{r.loss!r}\t{r.baseline_loss!r}"
            f"\t{r.residual!r}\t{r.delta!r}"
        )
    return "\n".join(lines) + "\n"


def write_records(path, records) -> None:
    Path(path).write_text(records_to_text(records), encoding="ascii")


def read_records(path) -> list[StepRecord]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or tuple(lines[0].split("\t")) != RECORD_FIELDS:
        raise ValueError(f"{path} is not a step-record file")
    out = []
    for line in lines[1:]:
        f = line.split("\t")
        out.append(
            StepRecord(
                step=int(f[0]),
                minibatch_id=int(f[1]),
                loss=float(f[2]),
                baseline_loss=float(f[3]),
                residual=float(f[4]),
                delta=float(f[5]),
            )
        )
    return out
