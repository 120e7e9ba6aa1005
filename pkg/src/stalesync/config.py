"""Shared domain types, experiment configuration, and seeded RNG streams.

Identifiers are plain value types: worker ids are dense ints in [0, P),
timestamps are non-negative float seconds, iteration counts are ints that
grow by one per push. Weight and gradient vectors wrap numpy arrays that
are frozen after construction so they can be copied across threads safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

WorkerId = int
Timestamp = float
IterationCount = int

PARADIGMS = ("bsp", "asp", "ssp", "dssp")
MODES = ("simulated", "threaded")
MODEL_KINDS = (
    "quadratic_bowl",
    "linear_regression",
    "logistic_regression",
    "tiny_mlp",
)
TIMING_PRESETS = ("homogeneous", "jitter", "gtx-mix", "straggler", "lognormal")

# Default full-dataset loss target per model kind, used when the config
# leaves loss_target unset. Overridable per experiment.
DEFAULT_LOSS_TARGET = {
    "quadratic_bowl": 1e-8,
    "linear_regression": 1e-6,
    "logistic_regression": 0.5,
    "tiny_mlp": 0.05,
}

# Fixed purpose labels for independent RNG streams; the index is part of
# the spawn key, so order here must never change.
_RNG_PURPOSES = ("init_weights", "dataset", "shuffle", "timing", "model")


class ConfigError(ValueError):
    """Raised when a configuration violates an invariant; the message
    names the offending field first."""


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class WeightVector:
    """Dense model parameters plus the server's update counter."""

    values: np.ndarray
    version: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.version < 0:
            raise ValueError("version must be non-negative")

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class GradientVector:
    """A mini-batch gradient tagged with who computed it and at which
    local iteration."""

    values: np.ndarray
    source: WorkerId
    source_iter: IterationCount

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class StalenessRange:
    """Staleness policy knobs: the hard lower threshold and how many extra
    pushes beyond it the controller may hand out."""

    s_lower: int = 0
    r_max: int = 0


@dataclass(frozen=True)
class TimingSpec:
    """Per-worker compute time and one-way communication delay model."""

    preset: str = "homogeneous"
    compute_base: float = 1.0
    comm_delay: float = 0.0
    straggler_ratio: float = 3.0


@dataclass(frozen=True)
class ExperimentConfig:
    paradigm: str = "bsp"
    mode: str = "simulated"
    worker_count: int = 1
    staleness: StalenessRange = field(default_factory=StalenessRange)
    timing_model: TimingSpec = field(default_factory=TimingSpec)
    model_kind: str = "quadratic_bowl"
    dimension: int = 8
    dataset_size: int = 0
    noise: float = 0.0
    batch_size: int = 8
    learning_rate: float = 0.05
    epochs: int = 1
    seed: int = 0
    loss_target: float = 0.0
    loss_every: int = 1


# Flat config-file keys in serialization order, mapped to where the value
# lives: either an ExperimentConfig field or a field of a nested spec.
_FLAT_KEYS = (
    ("paradigm", str),
    ("mode", str),
    ("worker_count", int),
    ("s_lower", int),
    ("r_max", int),
    ("timing_preset", str),
    ("compute_base", float),
    ("comm_delay", float),
    ("straggler_ratio", float),
    ("model_kind", str),
    ("dimension", int),
    ("dataset_size", int),
    ("noise", float),
    ("batch_size", int),
    ("learning_rate", float),
    ("epochs", int),
    ("seed", int),
    ("loss_target", float),
    ("loss_every", int),
)


def make_config(**flat) -> ExperimentConfig:
    """Build an ExperimentConfig from flat key=value pairs (the same
    vocabulary the config file format uses). Unknown keys are errors."""
    known = {k for k, _ in _FLAT_KEYS}
    for key in flat:
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key")
    kwargs = {}
    staleness = {}
    timing = {}
    for key, conv in _FLAT_KEYS:
        if key not in flat:
            continue
        raw = flat[key]
        try:
            value = conv(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot parse {raw!r} as {conv.__name__}")
        if key in ("s_lower", "r_max"):
            staleness[key] = value
        elif key == "timing_preset":
            timing["preset"] = value
        elif key in ("compute_base", "comm_delay", "straggler_ratio"):
            timing[key] = value
        else:
            kwargs[key] = value
    if staleness:
        kwargs["staleness"] = StalenessRange(**staleness)
    if timing:
        kwargs["timing_model"] = TimingSpec(**timing)
    return ExperimentConfig(**kwargs)


def _flatten(config: ExperimentConfig) -> dict:
    return {
        "paradigm": config.paradigm,
        "mode": config.mode,
        "worker_count": config.worker_count,
        "s_lower": config.staleness.s_lower,
        "r_max": config.staleness.r_max,
        "timing_preset": config.timing_model.preset,
        "compute_base": config.timing_model.compute_base,
        "comm_delay": config.timing_model.comm_delay,
        "straggler_ratio": config.timing_model.straggler_ratio,
        "model_kind": config.model_kind,
        "dimension": config.dimension,
        "dataset_size": config.dataset_size,
        "noise": config.noise,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "epochs": config.epochs,
        "seed": config.seed,
        "loss_target": config.loss_target,
        "loss_every": config.loss_every,
    }


def serialize_config(config: ExperimentConfig) -> str:
    """Render a config as flat `key = value` lines in a fixed order.

    Floats use repr so serialize -> parse round-trips exactly.
    """
    flat = _flatten(config)
    lines = [f"{key} = {flat[key]!r}" if isinstance(flat[key], float) else f"{key} = {flat[key]}" for key, _ in _FLAT_KEYS]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat `key = value` lines; `#` starts a comment, blank lines
    are ignored, unknown keys and duplicates are errors."""
    flat = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in flat:
            raise ConfigError(f"{key}: duplicate key on line {lineno}")
        flat[key] = value
    return make_config(**flat)


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    """Check every invariant and return a normalized copy.

    Normalizations: SSP zeroes r_max (it only uses s_lower); BSP and ASP
    zero the whole staleness range; an unset dataset_size gets a default
    of eight batches per worker; dataset_size is rounded up to a multiple
    of worker_count so shards come out exactly equal; an unset loss_target
    gets the per-model default. The first violated invariant is reported
    by field name.
    """
    _require(config.paradigm in PARADIGMS,
             f"paradigm: must be one of {', '.join(PARADIGMS)}, got {config.paradigm!r}")
    _require(config.mode in MODES,
             f"mode: must be one of {', '.join(MODES)}, got {config.mode!r}")
    _require(isinstance(config.worker_count, int) and config.worker_count >= 1,
             f"worker_count: must be an integer >= 1, got {config.worker_count!r}")
    _require(config.staleness.s_lower >= 0,
             f"staleness.s_lower: must be >= 0, got {config.staleness.s_lower}")
    _require(config.staleness.r_max >= 0,
             f"staleness.r_max: must be >= 0, got {config.staleness.r_max}")
    timing = config.timing_model
    _require(timing.preset in TIMING_PRESETS,
             f"timing_model.preset: must be one of {', '.join(TIMING_PRESETS)}, got {timing.preset!r}")
    _require(timing.compute_base > 0,
             f"timing_model.compute_base: must be > 0, got {timing.compute_base}")
    _require(timing.comm_delay >= 0,
             f"timing_model.comm_delay: must be >= 0, got {timing.comm_delay}")
    _require(timing.straggler_ratio >= 1,
             f"timing_model.straggler_ratio: must be >= 1, got {timing.straggler_ratio}")
    _require(config.model_kind in MODEL_KINDS,
             f"model_kind: must be one of {', '.join(MODEL_KINDS)}, got {config.model_kind!r}")
    _require(config.dimension >= 1,
             f"dimension: must be >= 1, got {config.dimension}")
    _require(config.batch_size >= 1,
             f"batch_size: must be >= 1, got {config.batch_size}")
    _require(config.learning_rate > 0,
             f"learning_rate: must be > 0, got {config.learning_rate}")
    _require(config.epochs >= 1,
             f"epochs: must be >= 1, got {config.epochs}")
    _require(config.noise >= 0,
             f"noise: must be >= 0, got {config.noise}")
    _require(-(2 ** 63) <= config.seed < 2 ** 64,
             f"seed: must fit in 64 bits, got {config.seed}")
    _require(config.loss_every >= 1,
             f"loss_every: must be >= 1, got {config.loss_every}")
    _require(config.loss_target >= 0,
             f"loss_target: must be >= 0 (0 selects the model default), got {config.loss_target}")

    minimum = config.worker_count * config.batch_size
    if config.dataset_size == 0:
        dataset_size = max(minimum, 8 * minimum)
    else:
        _require(config.dataset_size >= minimum,
                 f"dataset_size: must be >= worker_count * batch_size = {minimum}, "
                 f"got {config.dataset_size}")
        dataset_size = config.dataset_size
    # Round up so shards are exactly equal and every worker runs the same
    # number of iterations per epoch.
    remainder = dataset_size % config.worker_count
    if remainder:
        dataset_size += config.worker_count - remainder

    staleness = config.staleness
    if config.paradigm == "ssp":
        staleness = StalenessRange(staleness.s_lower, 0)
    elif config.paradigm in ("bsp", "asp"):
        staleness = StalenessRange(0, 0)

    loss_target = config.loss_target
    if loss_target == 0:
        loss_target = DEFAULT_LOSS_TARGET[config.model_kind]

    return replace(config, staleness=staleness, dataset_size=dataset_size,
                   loss_target=loss_target, seed=int(config.seed))


def rng_stream(seed: int, purpose: str, worker: WorkerId = 0) -> np.random.Generator:
    """Independent deterministic stream for (seed, purpose, worker).

    Streams never depend on scheduling order: each consumer owns its own
    generator keyed by purpose and worker id.
    """
    if purpose not in _RNG_PURPOSES:
        raise ValueError(f"unknown rng purpose {purpose!r}")
    key = (_RNG_PURPOSES.index(purpose), int(worker))
    seq = np.random.SeedSequence(entropy=int(seed) & (2 ** 64 - 1), spawn_key=key)
    return np.random.default_rng(seq)
