"""The logical parameter server: weights, update application, pulls, and
grant/defer decisions delegated to the synchronization policy.

Updates are always applied before the grant decision is made, and
"aggregation" of simultaneous pushes is sequential application of each
gradient within the same instant: callers that detect simultaneity (the
simulator) apply every gradient first via apply_gradient, then run each
decision via decide_push. handle_push is the two in one for callers
without simultaneity (the threaded runner).
"""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig, GradientVector, Timestamp, WeightVector, WorkerId, rng_stream
from .policy import ProtocolError, SyncDecision, SyncPolicy


class DivergenceError(RuntimeError):
    """Weights went non-finite; the run cannot continue."""


def initial_weights(config: ExperimentConfig, dimension: int) -> WeightVector:
    values = rng_stream(config.seed, "init_weights").uniform(-0.5, 0.5, size=dimension)
    return WeightVector(values, version=0)


def apply_update(weights: WeightVector, g: GradientVector,
                 learning_rate: float) -> WeightVector:
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if g.dimension != weights.dimension:
        raise ValueError(
            f"gradient dimension {g.dimension} != weights dimension {weights.dimension}")
    with np.errstate(over="ignore", invalid="ignore"):
        values = weights.values - learning_rate * g.values
    if not np.all(np.isfinite(values)):
        raise DivergenceError(
            f"non-finite weights after update {weights.version + 1} "
            f"from worker {g.source}")
    return WeightVector(values, version=weights.version + 1)


class ParameterServer:
    def __init__(self, config: ExperimentConfig, dimension: int,
                 policy: SyncPolicy | None = None):
        self.config = config
        self.weights = initial_weights(config, dimension)
        self.policy = policy if policy is not None else SyncPolicy(config)
        self.pending: dict[WorkerId, Timestamp] = {}
        self.rejected_updates = 0

    @property
    def clocks(self):
        return self.policy.clocks

    def apply_gradient(self, g: GradientVector) -> bool:
        """Apply one update; a non-finite gradient is rejected and counted
        instead of poisoning the weights. Returns whether it was applied."""
        if g.dimension != self.weights.dimension:
            raise ValueError(
                f"gradient dimension {g.dimension} != weights dimension "
                f"{self.weights.dimension}")
        if not np.all(np.isfinite(g.values)):
            self.rejected_updates += 1
            return False
        self.weights = apply_update(self.weights, g, self.config.learning_rate)
        return True

    def decide_push(self, p: WorkerId, now: Timestamp) -> SyncDecision:
        decision = self.policy.on_push(p, now)
        if decision.granted:
            for released in decision.released:
                self.pending.pop(released, None)
        else:
            self.pending[p] = now
        return decision

    def handle_push(self, g: GradientVector, now: Timestamp) -> SyncDecision:
        self.apply_gradient(g)
        return self.decide_push(g.source, now)

    def handle_pull(self, p: WorkerId) -> WeightVector:
        """Snapshot of the current weights; WeightVector is immutable so
        later pushes replace rather than mutate it."""
        if p not in self.policy.clocks.counts:
            raise ProtocolError(f"unknown worker {p}")
        if p in self.pending:
            raise ProtocolError(f"worker {p} pulled while deferred")
        return self.weights
