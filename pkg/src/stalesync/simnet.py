"""Deterministic discrete-event simulator of the cluster.

Each worker cycles through compute -> push -> grant -> pull, with every
communication leg costing one one-way delay. Events are processed in
(time, sequence) order; pushes sitting in the queue at the same instant
are aggregated: all their gradients are applied before any of their
grant decisions run. A deferred worker consumes no simulated time until
the granting push that releases it.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .config import ExperimentConfig, TimingSpec, rng_stream
from .engine import WorkerState, make_dataset, make_model, partition, push_budget
from .metrics import LossLog, MetricsReport, summarize
from .server import ParameterServer
from . import trace as tr

GTX_MIX_RATIO = 2.2
JITTER_SPREAD = 0.2
LOGNORMAL_SIGMA = 0.25


class DeadlockError(RuntimeError):
    def __init__(self, stuck):
        self.stuck = tuple(sorted(stuck))
        super().__init__(f"simulation deadlocked with workers {self.stuck} unfinished")


class TimingModel:
    """Per-worker compute time and one-way communication delay draws.

    Draws come from per-worker streams, so a worker's timing sequence
    does not depend on scheduling order. All compute draws are strictly
    positive; communication delay is a non-negative constant.
    """

    def __init__(self, spec: TimingSpec, worker_count: int, seed: int):
        self.spec = spec
        self.worker_count = worker_count
        self._rngs = [rng_stream(seed, "timing", w) for w in range(worker_count)]
        base = spec.compute_base
        if spec.preset == "gtx-mix":
            fast = (worker_count + 1) // 2
            self._bases = [base if w < fast else GTX_MIX_RATIO * base
                           for w in range(worker_count)]
        elif spec.preset == "straggler":
            self._bases = [base] * worker_count
            if worker_count > 1:
                self._bases[worker_count - 1] = spec.straggler_ratio * base
        else:
            self._bases = [base] * worker_count

    def compute_time(self, worker: int) -> float:
        base = self._bases[worker]
        preset = self.spec.preset
        if preset == "jitter":
            low, high = (1.0 - JITTER_SPREAD) * base, (1.0 + JITTER_SPREAD) * base
            return float(self._rngs[worker].uniform(low, high))
        if preset == "lognormal":
            return float(self._rngs[worker].lognormal(math.log(base), LOGNORMAL_SIGMA))
        return base

    def comm_delay(self, worker: int) -> float:
        return self.spec.comm_delay


@dataclass
class _Pending:
    """Worker-side in-flight state between events."""

    gradient: object = None
    snapshot: object = None
    finished_at: float | None = None


class Simulation:
    def __init__(self, config: ExperimentConfig, policy=None,
                 max_events: int | None = None):
        if config.mode != "simulated":
            raise ValueError(f"mode: run_simulation requires simulated, got {config.mode!r}")
        self.config = config
        self.max_events = max_events
        self.model = make_model(config.model_kind, config.dimension, config.seed)
        self.dataset = make_dataset(config.model_kind, config.dataset_size,
                                    config.dimension, config.seed, config.noise)
        shards = partition(self.dataset, config.worker_count, config.seed)
        self.server = ParameterServer(self.config, self.model.param_dim, policy)
        self.timing = TimingModel(config.timing_model, config.worker_count, config.seed)
        self.budget = push_budget(config)
        self.workers = [
            WorkerState(w, self.model, shards[w], None, config.batch_size)
            for w in range(config.worker_count)
        ]
        self.pending = [_Pending() for _ in range(config.worker_count)]
        self.heap: list = []
        self.seq = 0
        self.entries: list[tr.TraceEntry] = []
        self.losses = LossLog()
        self.processed = 0

    def _schedule(self, at: float, kind: str, worker: int):
        heapq.heappush(self.heap, (at, self.seq, kind, worker))
        self.seq += 1

    def _record(self, at: float, worker: int, kind: str, decision: str = "-"):
        self.entries.append(tr.TraceEntry(at, worker, kind,
                                          self.server.clocks[worker], decision))

    def _full_loss(self) -> float:
        return self.model.loss(self.server.weights.values,
                               self.dataset.features, self.dataset.labels)

    def _after_update(self, at: float):
        version = self.server.weights.version
        if version % self.config.loss_every:
            return
        loss = self._full_loss()
        self.losses.curve.append((version, loss))
        if self.losses.time_to_target is None and loss <= self.config.loss_target:
            self.losses.time_to_target = at

    def run(self) -> tuple[list[tr.TraceEntry], MetricsReport]:
        for worker in range(self.config.worker_count):
            self._schedule(self.timing.comm_delay(worker), tr.PULL_ARRIVE, worker)
        while self.heap:
            if self.max_events is not None and self.processed >= self.max_events:
                raise RuntimeError(f"event budget {self.max_events} exceeded")
            at, _, kind, worker = heapq.heappop(self.heap)
            self.processed += 1
            if kind == tr.PULL_ARRIVE:
                self.pending[worker].snapshot = self.server.handle_pull(worker)
                self._record(at, worker, kind)
                self._schedule(at + self.timing.comm_delay(worker), tr.PULL_RETURN, worker)
            elif kind == tr.PULL_RETURN:
                self._pull_return(at, worker)
            elif kind == tr.COMPUTE_DONE:
                self.pending[worker].gradient = self.workers[worker].begin_iteration()
                self._record(at, worker, kind)
                self._schedule(at + self.timing.comm_delay(worker), tr.PUSH_ARRIVE, worker)
            elif kind == tr.GRANT_DELIVER:
                self._record(at, worker, kind)
                self._schedule(at + self.timing.comm_delay(worker), tr.PULL_ARRIVE, worker)
            else:
                self._push_group(at, worker)
        unfinished = [w for w in range(self.config.worker_count)
                      if self.pending[w].finished_at is None]
        if unfinished:
            raise DeadlockError(unfinished)
        return self.entries, self._report()

    def _pull_return(self, at: float, worker: int):
        state = self.workers[worker]
        state.adopt(self.pending[worker].snapshot)
        self.pending[worker].snapshot = None
        self._record(at, worker, tr.PULL_RETURN)
        if state.iterations < self.budget:
            self._schedule(at + self.timing.compute_time(worker), tr.COMPUTE_DONE, worker)
        else:
            self.pending[worker].finished_at = at
            self.losses.worker_epochs[worker] = state.shard.epochs_done

    def _push_group(self, at: float, worker: int):
        """Handle a push arrival, aggregating with any other pushes queued
        at exactly the same instant: apply all updates, then decide each
        in sequence order."""
        group = [(-1, worker)]
        if self.heap and self.heap[0][0] == at:
            keep = []
            for event in self.heap:
                if event[0] == at and event[2] == tr.PUSH_ARRIVE:
                    group.append((event[1], event[3]))
                else:
                    keep.append(event)
            if len(keep) != len(self.heap):
                self.heap = keep
                heapq.heapify(self.heap)
        group = [member for _, member in sorted(group)]
        for member in group:
            gradient = self.pending[member].gradient
            self.pending[member].gradient = None
            state = self.workers[member]
            if self.server.apply_gradient(gradient):
                self.losses.batch_losses.append(state.last_batch_loss)
                self._after_update(at)
            else:
                self.losses.rejected_pushes.add((member, state.iterations))
        for member in group:
            decision = self.server.decide_push(member, at)
            self._record(at, member, tr.PUSH_ARRIVE,
                         tr.decision_token(decision.granted, decision.released))
            if decision.granted:
                self._schedule(at + self.timing.comm_delay(member),
                               tr.GRANT_DELIVER, member)
                for released in decision.released:
                    self._schedule(at + self.timing.comm_delay(released),
                                   tr.GRANT_DELIVER, released)

    def _report(self) -> MetricsReport:
        self.losses.final_loss = self._full_loss()
        version = self.server.weights.version
        if not self.losses.curve or self.losses.curve[-1][0] != version:
            self.losses.curve.append((version, self.losses.final_loss))
        return summarize(self.entries, self.losses)


def run_simulation(config: ExperimentConfig, policy=None,
                   max_events: int | None = None):
    """Execute a full simulated run; returns (trace entries, MetricsReport).

    Deterministic for a given config: the same seed always produces the
    same trace, byte for byte once exported.
    """
    return Simulation(config, policy=policy, max_events=max_events).run()


def staleness_of_update(entries, update_index: int) -> int:
    from .metrics import staleness_of_update as _impl
    return _impl(entries, update_index)
