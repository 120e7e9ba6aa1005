"""Synchronization paradigms as pure decision state machines.

All four paradigms share one mechanism: a push increments the pusher's
clock, then a gap rule decides grant or defer, then any deferred worker
whose gap condition now holds is released. BSP is the machine with
threshold 0 (a barrier), SSP uses a fixed threshold, ASP always grants,
and DSSP layers credit minting on top of the SSP rule: when the fastest
worker runs out of credits past the threshold, a controller predicts how
many extra pushes would land it closest to the slowest worker's next
pushes and hands those out as credits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, Timestamp, WorkerId

GRANT = "grant"
DEFER = "defer"

# Non-positive measured intervals (possible under wall-clock jitter) are
# clamped to this floor before projecting.
INTERVAL_FLOOR = 1e-9


class ProtocolError(RuntimeError):
    """A worker broke the push/grant/pull protocol."""


@dataclass(frozen=True)
class SyncDecision:
    outcome: str
    released: tuple[WorkerId, ...] = ()

    @property
    def granted(self) -> bool:
        return self.outcome == GRANT


class IterationClockTable:
    """Push counts per worker; the source of fastest/slowest."""

    def __init__(self, worker_count: int):
        if worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        self.counts = {WorkerId(w): 0 for w in range(worker_count)}

    def __getitem__(self, worker: WorkerId) -> int:
        return self.counts[worker]

    def increment(self, worker: WorkerId) -> int:
        if worker not in self.counts:
            raise ProtocolError(f"unknown worker {worker}")
        self.counts[worker] += 1
        return self.counts[worker]

    def minimum(self) -> int:
        return min(self.counts.values())

    def maximum(self) -> int:
        return max(self.counts.values())

    def slowest(self) -> WorkerId:
        # Ties go to the smallest id, for determinism.
        low = self.minimum()
        return min(w for w, n in self.counts.items() if n == low)

    def is_fastest(self, worker: WorkerId) -> bool:
        # Ties count as fastest.
        return self.counts[worker] >= self.maximum()


class PushHistoryTable:
    """Two most recent push timestamps per worker."""

    def __init__(self, worker_count: int):
        self.latest = {WorkerId(w): 0.0 for w in range(worker_count)}
        self.previous = {WorkerId(w): 0.0 for w in range(worker_count)}
        self.populated = {WorkerId(w): 0 for w in range(worker_count)}

    def record(self, worker: WorkerId, push_time: Timestamp):
        self.previous[worker] = self.latest[worker]
        self.latest[worker] = float(push_time)
        self.populated[worker] += 1

    def interval(self, worker: WorkerId) -> float:
        return max(self.latest[worker] - self.previous[worker], INTERVAL_FLOOR)


class CreditTable:
    """Extra pushes each worker may still spend beyond the threshold."""

    def __init__(self, worker_count: int):
        self.credits = {WorkerId(w): 0 for w in range(worker_count)}

    def __getitem__(self, worker: WorkerId) -> int:
        return self.credits[worker]

    def __setitem__(self, worker: WorkerId, value: int):
        if value < 0:
            raise ValueError("credits cannot go negative")
        self.credits[worker] = value


def synchronization_controller(history: PushHistoryTable, p: WorkerId,
                               push_time: Timestamp,
                               clocks: IterationClockTable,
                               r_max: int) -> int:
    """Predict how many extra pushes land worker p nearest to one of the
    slowest worker's projected future pushes.

    Records push_time for p first. With fewer than two recorded pushes on
    either side there is no interval to extrapolate, so the answer is 0.
    Candidate times for p start at its latest push; the slowest worker's
    projected series starts one interval out. Ties break toward the
    smallest extra-push count.
    """
    history.record(p, push_time)
    if r_max <= 0:
        return 0
    slowest = clocks.slowest()
    if history.populated[p] < 2 or history.populated[slowest] < 2:
        return 0
    steps = np.arange(r_max + 1, dtype=np.float64)
    candidates = history.latest[p] + steps * history.interval(p)
    slow_pushes = history.latest[slowest] + (steps + 1.0) * history.interval(slowest)
    gaps = np.abs(slow_pushes[np.newaxis, :] - candidates[:, np.newaxis])
    best_per_r = gaps.min(axis=1)
    return int(np.argmin(best_per_r))  # argmin takes the first, smallest r


class SyncPolicy:
    """Decision machine for one run; callers serialize on_push calls."""

    def __init__(self, config: ExperimentConfig):
        self.paradigm = config.paradigm
        self.worker_count = config.worker_count
        self.s_lower = config.staleness.s_lower
        self.r_max = config.staleness.r_max
        if self.paradigm == "bsp":
            self.threshold = 0
        else:
            self.threshold = self.s_lower
        self.clocks = IterationClockTable(config.worker_count)
        self.history = PushHistoryTable(config.worker_count)
        self.credits = CreditTable(config.worker_count)
        self.deferred: set[WorkerId] = set()

    def on_push(self, p: WorkerId, now: Timestamp) -> SyncDecision:
        if p not in self.clocks.counts:
            raise ProtocolError(f"unknown worker {p}")
        if p in self.deferred:
            raise ProtocolError(f"worker {p} pushed while deferred")
        count = self.clocks.increment(p)
        if self.paradigm == "asp":
            self.history.record(p, now)
            return SyncDecision(GRANT)
        if self.paradigm == "dssp":
            outcome = self._dssp_decide(p, now, count)
        else:
            self.history.record(p, now)
            gap = count - self.clocks.minimum()
            outcome = GRANT if gap <= self.threshold else DEFER
        if outcome == DEFER:
            self.deferred.add(p)
            return SyncDecision(DEFER)
        return SyncDecision(GRANT, released=self._release())

    def _dssp_decide(self, p: WorkerId, now: Timestamp, count: int) -> str:
        if self.credits[p] > 0:
            self.credits[p] -= 1
            self.history.record(p, now)
            return GRANT
        gap = count - self.clocks.minimum()
        if gap <= self.s_lower:
            self.history.record(p, now)
            return GRANT
        if not self.clocks.is_fastest(p):
            self.history.record(p, now)
            return DEFER
        # Credits exhausted, threshold violated, and p leads the pack:
        # consult the controller (which records this push itself). Minted
        # credits are capped by the headroom left under the hard ceiling
        # s_lower + r_max so a frozen slowest worker can never be outrun
        # past it.
        predicted = synchronization_controller(self.history, p, now,
                                               self.clocks, self.r_max)
        headroom = max(0, (self.s_lower + self.r_max) - gap)
        self.credits[p] = min(predicted, headroom)
        # The minting push itself is granted on the predictor's word
        # without spending a credit.
        return GRANT if self.credits[p] > 0 else DEFER

    def _release(self) -> tuple[WorkerId, ...]:
        if not self.deferred:
            return ()
        low = self.clocks.minimum()
        ready = tuple(sorted(
            q for q in self.deferred
            if self.clocks[q] - low <= self.threshold
        ))
        self.deferred.difference_update(ready)
        return ready


def max_staleness_bound(config: ExperimentConfig) -> int:
    """Ceiling on the clock gap the paradigm permits at grant time."""
    if config.paradigm == "ssp":
        return config.staleness.s_lower
    if config.paradigm == "dssp":
        return config.staleness.s_lower + config.staleness.r_max
    if config.paradigm == "bsp":
        raise ValueError("bsp: staleness bound is 0 by construction")
    if config.paradigm == "asp":
        raise ValueError("asp: staleness is unbounded")
    raise ValueError(f"unknown paradigm {config.paradigm!r}")
