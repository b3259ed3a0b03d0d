"""Flat key-value run configuration.

A config file is lines of ``key = value`` with ``#`` comments.  A ``version``
key is required and unknown keys are hard errors; silent config drift
corrupts experiments.  One file fully describes a run: the task is
regenerated from its seed, never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .estimators import EstimatorKind
from .masks import NMMask, SparsityPattern, read_mask_text
from .tasks import (
    ConfinedLossTask,
    PlantedInstance,
    ToyTask,
    WeightDistanceTask,
    make_mlp_task,
    make_planted_linear,
    random_mask,
)

CONFIG_VERSION = 1

TASK_KINDS = ("planted-linear", "mlp", "weight-distance", "confined-linear")
M0_SOURCES = ("magnitude", "random", "file")


@dataclass
class RunConfig:
    # task
    task: str = "planted-linear"
    dim: int = 64
    pattern: str = "2:4"
    n_samples: int = 128
    batch_size: int = 0  # 0 means the whole dataset is one minibatch
    noise: float = 0.0
    task_seed: int = 0
    min_gap: float = 0.0
    hidden_width: int = 4
    weights: str = ""  # explicit comma list for weight-distance tasks
    confine_lo: float = 1.0
    confine_hi: float = 2.0
    calibration_batches: int = 1
    # training
    estimator: str = "smoothed-residual"
    eta: float = 0.05
    alpha: float = 0.99
    init_magnitude: float = 10.0
    m0: str = "magnitude"
    m0_file: str = ""
    seed: int = 0
    steps: int = 20000
    refresh: bool = False
    refresh_threshold: float = 0.0
    select_samples: int = 0  # >0: pick the final mask from that many draws
    # reports
    samples: int = 100000
    tracker_steps: int = 2000

    def sparsity_pattern(self) -> SparsityPattern:
        return SparsityPattern.parse(self.pattern)

    def estimator_kind(self) -> EstimatorKind:
        return EstimatorKind.parse(self.estimator)


_BOOL_WORDS = {"true": True, "on": True, "yes": True, "false": False, "off": False, "no": False}


def _cast(name: str, kind, raw: str):
    try:
        if kind is bool:
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(f"expected a boolean word, got {raw!r}")
            return _BOOL_WORDS[raw.lower()]
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"config field {name!r}: {exc}") from exc


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    typemap = {"int": int, "float": float, "str": str, "bool": bool}
    values: dict = {}
    version = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key == "version":
            version = raw
            continue
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _cast(key, typemap[known[key]], raw)
    if version is None:
        raise ConfigError(f"{source}: missing required 'version' key")
    if version != str(CONFIG_VERSION):
        raise ConfigError(f"{source}: unsupported config version {version!r}")
    cfg = RunConfig(**values)
    validate_config(cfg, source)
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), source=str(p))


def validate_config(cfg: RunConfig, source: str = "<config>") -> None:
    def fail(field: str, message: str):
        raise ConfigError(f"{source}: field {field!r} {message}")

    if cfg.task not in TASK_KINDS:
        fail("task", f"must be one of {TASK_KINDS}, got {cfg.task!r}")
    try:
        pattern = cfg.sparsity_pattern()
    except ValueError as exc:
        fail("pattern", str(exc))
    if cfg.task == "weight-distance":
        if not cfg.weights:
            fail("weights", "is required for weight-distance tasks")
    elif cfg.dim % pattern.group_size != 0:
        fail("dim", f"{cfg.dim} is not divisible by M={pattern.group_size}")
    if not (0.0 <= cfg.alpha < 1.0):
        fail("alpha", f"must lie in [0, 1), got {cfg.alpha}")
    if cfg.eta < 0:
        fail("eta", f"must be >= 0, got {cfg.eta}")
    if cfg.steps < 0:
        fail("steps", f"must be >= 0, got {cfg.steps}")
    if cfg.n_samples < 1:
        fail("n_samples", "must be positive")
    if cfg.batch_size < 0:
        fail("batch_size", "must be >= 0")
    if cfg.noise < 0:
        fail("noise", "must be >= 0")
    try:
        cfg.estimator_kind()
    except ValueError as exc:
        fail("estimator", str(exc))
    if cfg.m0 not in M0_SOURCES:
        fail("m0", f"must be one of {M0_SOURCES}, got {cfg.m0!r}")
    if cfg.m0 == "file":
        if not cfg.m0_file:
            fail("m0_file", "is required when m0 = file")
        if not Path(cfg.m0_file).exists():
            fail("m0_file", f"file not found: {cfg.m0_file}")
    if cfg.samples < 1000:
        fail("samples", "reports need at least 1000 samples")
    if cfg.select_samples < 0:
        fail("select_samples", "must be >= 0")


def build_task(cfg: RunConfig) -> tuple[ToyTask, NMMask | None]:
    """Instantiate the configured task; returns (task, planted mask or None)."""
    pattern = cfg.sparsity_pattern()
    batch = cfg.batch_size if cfg.batch_size > 0 else cfg.n_samples
    if cfg.task == "weight-distance":
        if not cfg.weights:
            raise ConfigError("weight-distance tasks need an explicit 'weights' list")
        w = [float(tok) for tok in cfg.weights.split(",")]
        return WeightDistanceTask(w, pattern), None
    if cfg.task == "mlp":
        return (
            make_mlp_task(cfg.dim, pattern, cfg.hidden_width, cfg.n_samples,
                          cfg.task_seed, batch),
            None,
        )
    instance: PlantedInstance = make_planted_linear(
        cfg.dim,
        pattern,
        cfg.n_samples,
        cfg.noise,
        cfg.task_seed,
        batch_size=batch,
        min_gap=cfg.min_gap,
        calibration_batches=cfg.calibration_batches,
    )
    if cfg.task == "confined-linear":
        return ConfinedLossTask(instance.task, cfg.confine_lo, cfg.confine_hi), instance.planted_mask
    return instance.task, instance.planted_mask


def resolve_m0(cfg: RunConfig, task: ToyTask) -> NMMask | None:
    """Baseline mask per config; None defers to the trainer's magnitude default."""
    if cfg.m0 == "magnitude":
        return None
    if cfg.m0 == "random":
        return random_mask(task.pattern, task.dim, cfg.seed)
    return read_mask_text(cfg.m0_file)
