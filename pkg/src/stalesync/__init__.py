"""Parameter-server synchronization paradigms for distributed SGD.

Four push/pull coordination disciplines over one shared model: a full
barrier every iteration, fully asynchronous updates, a fixed staleness
ceiling, and a dynamic ceiling that predicts per worker how many extra
iterations will minimize the fastest worker's waiting time. A
deterministic discrete-event simulator and a threaded harness execute
the same policies; metrics cover waiting time, throughput, staleness,
loss, and regret.
"""

from .cli import cli_main
from .config import (
    MODEL_KINDS,
    MODES,
    PARADIGMS,
    TIMING_PRESETS,
    ConfigError,
    ExperimentConfig,
    GradientVector,
    StalenessRange,
    TimingSpec,
    WeightVector,
    make_config,
    parse_config,
    rng_stream,
    serialize_config,
    validate_config,
)
from .engine import (
    DataShard,
    Dataset,
    WorkerState,
    compute_gradient,
    make_dataset,
    make_model,
    partition,
    push_budget,
)
from .metrics import (
    LossLog,
    MetricsReport,
    RegretCurve,
    WorkerMetrics,
    compare_csv,
    compute_regret,
    reference_optimum,
    report_csv,
    staleness_of_update,
    summarize,
    sweep_csv,
)
from .policy import (
    DEFER,
    GRANT,
    CreditTable,
    IterationClockTable,
    ProtocolError,
    PushHistoryTable,
    SyncDecision,
    SyncPolicy,
    max_staleness_bound,
    synchronization_controller,
)
from .runner import ThreadedRun, deadline_guard, run_threaded
from .server import DivergenceError, ParameterServer, apply_update, initial_weights
from .simnet import DeadlockError, Simulation, TimingModel, run_simulation
from .trace import TraceEntry, format_trace, parse_trace

__version__ = "0.1.0"

__all__ = [
    "MODEL_KINDS",
    "MODES",
    "PARADIGMS",
    "TIMING_PRESETS",
    "ConfigError",
    "CreditTable",
    "DEFER",
    "DataShard",
    "Dataset",
    "DeadlockError",
    "DivergenceError",
    "ExperimentConfig",
    "GRANT",
    "GradientVector",
    "IterationClockTable",
    "LossLog",
    "MetricsReport",
    "ParameterServer",
    "ProtocolError",
    "PushHistoryTable",
    "RegretCurve",
    "Simulation",
    "StalenessRange",
    "SyncDecision",
    "SyncPolicy",
    "ThreadedRun",
    "TimingModel",
    "TimingSpec",
    "TraceEntry",
    "WeightVector",
    "WorkerMetrics",
    "WorkerState",
    "apply_update",
    "cli_main",
    "compare_csv",
    "compute_gradient",
    "compute_regret",
    "deadline_guard",
    "format_trace",
    "initial_weights",
    "make_config",
    "make_dataset",
    "make_model",
    "max_staleness_bound",
    "parse_config",
    "parse_trace",
    "partition",
    "push_budget",
    "reference_optimum",
    "report_csv",
    "rng_stream",
    "run_simulation",
    "run_threaded",
    "serialize_config",
    "staleness_of_update",
    "summarize",
    "sweep_csv",
    "synchronization_controller",
    "validate_config",
    "__version__",
]
