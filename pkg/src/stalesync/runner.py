"""Threaded execution harness.

Runs one OS thread per worker against a shared parameter server, with
the same iteration structure as the simulator: pull round trip, busy
compute, push travel, grant travel back. Compute burns real CPU on a
monotonic-clock spin; communication legs sleep. A deferred worker parks
on an event until the granting push releases it.

Every moment of a worker's run is charged to exactly one of wait,
compute, or comm via a single running cursor, so the three buckets sum
to the worker's elapsed time by construction.
"""

from __future__ import annotations

import threading
import time

from .config import ExperimentConfig
from .engine import WorkerState, make_dataset, make_model, partition, push_budget
from .metrics import LossLog, MetricsReport, WorkerMetrics
from .server import DivergenceError, ParameterServer
from .simnet import TimingModel
from . import trace as tr

# How long result() waits for threads after an abort before declaring
# them stuck. Workers blocked in interruptible sleeps or parks exit
# almost immediately; only a thread wedged inside the server lock (for
# example a hung policy) runs out this grace.
JOIN_GRACE_S = 1.0

# A parked worker re-checks the abort flag at this interval. A genuine
# release wakes it immediately through the event.
PARK_POLL_S = 0.05

WAIT, COMPUTE, COMM = "wait", "compute", "comm"


class ThreadedRun:
    """One threaded experiment. start() launches the workers; result()
    joins them and assembles the trace and report.

    The server, policy, loss log, and trace are only touched while
    holding one lock, which also keeps trace timestamps globally
    non-decreasing in append order.
    """

    def __init__(self, config: ExperimentConfig, policy=None):
        if config.mode != "threaded":
            raise ValueError(f"mode: run_threaded requires threaded, got {config.mode!r}")
        self.config = config
        self.model = make_model(config.model_kind, config.dimension, config.seed)
        self.dataset = make_dataset(config.model_kind, config.dataset_size,
                                    config.dimension, config.seed, config.noise)
        shards = partition(self.dataset, config.worker_count, config.seed)
        self.server = ParameterServer(config, self.model.param_dim, policy)
        self.timing = TimingModel(config.timing_model, config.worker_count, config.seed)
        self.budget = push_budget(config)
        self.workers = [
            WorkerState(w, self.model, shards[w], None, config.batch_size)
            for w in range(config.worker_count)
        ]
        self.lock = threading.Lock()
        self.abort_event = threading.Event()
        self.done = threading.Event()
        self.release_events = [threading.Event() for _ in range(config.worker_count)]
        self.buckets = [{WAIT: 0.0, COMPUTE: 0.0, COMM: 0.0}
                        for _ in range(config.worker_count)]
        self.stopped_at = [None] * config.worker_count
        self.completed = [False] * config.worker_count
        self.diverged: set[int] = set()
        self.entries: list[tr.TraceEntry] = []
        self.losses = LossLog()
        self.staleness_hist: dict[int, int] = {}
        self._t0 = 0.0
        self._live = config.worker_count
        self._live_lock = threading.Lock()
        self.threads = [
            threading.Thread(target=self._worker_loop, args=(w,),
                             name=f"worker-{w}", daemon=True)
            for w in range(config.worker_count)
        ]

    # -- clock and bookkeeping ------------------------------------------

    def _now(self) -> float:
        return time.monotonic() - self._t0

    def _record_locked(self, worker: int, kind: str, decision: str = "-"):
        self.entries.append(tr.TraceEntry(self._now(), worker, kind,
                                          self.server.clocks[worker], decision))

    def _sample_loss_locked(self, at: float):
        version = self.server.weights.version
        if version % self.config.loss_every:
            return
        loss = self.model.loss(self.server.weights.values,
                               self.dataset.features, self.dataset.labels)
        self.losses.curve.append((version, loss))
        if self.losses.time_to_target is None and loss <= self.config.loss_target:
            self.losses.time_to_target = at

    # -- lifecycle ------------------------------------------------------

    def start(self):
        self._t0 = time.monotonic()
        for thread in self.threads:
            thread.start()

    def abort(self):
        self.abort_event.set()

    def join(self, grace: float | None = None):
        """Wait for the worker threads. Without a grace each join is
        unbounded; with one, threads still alive afterwards are left to
        die with the process."""
        for thread in self.threads:
            thread.join(grace)

    def result(self) -> tuple[list[tr.TraceEntry], MetricsReport]:
        # done is set by the last thread out; an aborted run may never
        # reach that (a thread can be wedged inside the lock), so watch
        # for the abort flag and fall back to a bounded join.
        while not self.done.wait(0.1):
            if self.abort_event.is_set():
                break
        self.join(JOIN_GRACE_S)
        stuck = tuple(w for w in range(self.config.worker_count)
                      if not self.completed[w])
        # Deliberately lock-free: a wedged policy may still hold the lock.
        # entries is append-only and weights is replaced atomically.
        entries = list(self.entries)
        weights = self.server.weights
        final_loss = self.model.loss(weights.values, self.dataset.features,
                                     self.dataset.labels)
        self.losses.final_loss = final_loss
        if not self.losses.curve or self.losses.curve[-1][0] != weights.version:
            self.losses.curve.append((weights.version, final_loss))
        per_worker = {}
        for w in range(self.config.worker_count):
            buckets = self.buckets[w]
            per_worker[w] = WorkerMetrics(
                iterations=self.workers[w].iterations,
                epochs=self.workers[w].shard.epochs_done,
                wait_s=buckets[WAIT],
                compute_s=buckets[COMPUTE],
                comm_s=buckets[COMM],
            )
        stopped = [t for t in self.stopped_at if t is not None]
        report = MetricsReport(
            per_worker=per_worker,
            updates_total=len(self.losses.batch_losses),
            duration_s=max(stopped) if stopped else 0.0,
            staleness_hist=dict(self.staleness_hist),
            max_staleness=max(self.staleness_hist, default=0),
            loss_curve=list(self.losses.curve),
            batch_losses=list(self.losses.batch_losses),
            time_to_target_s=self.losses.time_to_target,
            final_loss=final_loss,
            rejected_updates=len(self.losses.rejected_pushes),
            incomplete=bool(stuck),
            stuck_workers=stuck,
        )
        return entries, report

    # -- worker thread --------------------------------------------------

    def _worker_loop(self, w: int):
        state = self.workers[w]
        buckets = self.buckets[w]
        cursor = 0.0

        def mark(kind: str) -> float:
            nonlocal cursor
            now = self._now()
            buckets[kind] += now - cursor
            cursor = now
            return now

        def sleep_comm(duration: float):
            if duration > 0:
                self.abort_event.wait(duration)
            mark(COMM)

        def spin_compute(duration: float):
            deadline = time.monotonic() + duration
            while time.monotonic() < deadline:
                if self.abort_event.is_set():
                    break

        try:
            comm = self.timing.comm_delay(w)
            # Initial pull round trip.
            sleep_comm(comm)
            if self.abort_event.is_set():
                return
            with self.lock:
                snapshot = self.server.handle_pull(w)
                self._record_locked(w, tr.PULL_ARRIVE)
            mark(COMM)
            sleep_comm(comm)
            with self.lock:
                self._record_locked(w, tr.PULL_RETURN)
            state.adopt(snapshot)
            mark(COMM)

            while not self.abort_event.is_set():
                if state.iterations >= self.budget:
                    self.completed[w] = True
                    with self.lock:
                        self.losses.worker_epochs[w] = state.shard.epochs_done
                    break

                spin_compute(self.timing.compute_time(w))
                if self.abort_event.is_set():
                    mark(COMPUTE)
                    break
                gradient = state.begin_iteration()
                with self.lock:
                    self._record_locked(w, tr.COMPUTE_DONE)
                mark(COMPUTE)

                sleep_comm(comm)  # push travels to the server
                if self.abort_event.is_set():
                    break
                try:
                    with self.lock:
                        applied = self.server.apply_gradient(gradient)
                        if applied:
                            self.losses.batch_losses.append(state.last_batch_loss)
                            self._sample_loss_locked(self._now())
                        else:
                            self.losses.rejected_pushes.add((w, state.iterations))
                        decision = self.server.decide_push(w, self._now())
                        if applied:
                            # Post-increment clocks, the same staleness the
                            # trace scan would reconstruct.
                            gap = self.server.clocks.maximum() - self.server.clocks[w]
                            self.staleness_hist[gap] = self.staleness_hist.get(gap, 0) + 1
                        self._record_locked(w, tr.PUSH_ARRIVE,
                                            tr.decision_token(decision.granted,
                                                              decision.released))
                        if decision.granted:
                            for released in decision.released:
                                self.release_events[released].set()
                        else:
                            # Any release strictly follows this defer under
                            # the same lock, so clearing here cannot lose one.
                            self.release_events[w].clear()
                except DivergenceError:
                    self.diverged.add(w)
                    break
                mark(COMM)

                if not decision.granted:
                    event = self.release_events[w]
                    while not event.is_set():
                        if self.abort_event.is_set():
                            break
                        event.wait(PARK_POLL_S)
                    mark(WAIT)
                    if self.abort_event.is_set() and not event.is_set():
                        break

                sleep_comm(comm)  # grant travels back
                if self.abort_event.is_set():
                    break
                with self.lock:
                    self._record_locked(w, tr.GRANT_DELIVER)
                mark(COMM)

                # Fresh pull round trip before the next iteration.
                sleep_comm(comm)
                if self.abort_event.is_set():
                    break
                with self.lock:
                    snapshot = self.server.handle_pull(w)
                    self._record_locked(w, tr.PULL_ARRIVE)
                mark(COMM)
                sleep_comm(comm)
                with self.lock:
                    self._record_locked(w, tr.PULL_RETURN)
                state.adopt(snapshot)
                mark(COMM)
        finally:
            self.stopped_at[w] = cursor
            with self._live_lock:
                self._live -= 1
                last_out = self._live == 0
            if last_out:
                self.done.set()


def deadline_guard(run: ThreadedRun, budget_s: float):
    """Abort the run if it has not finished within budget_s seconds.
    A budget of zero or less aborts immediately."""
    if budget_s <= 0 or not run.done.wait(budget_s):
        run.abort()


def run_threaded(config: ExperimentConfig, policy=None,
                 deadline: float | None = None):
    """Execute a full threaded run; returns (trace entries, MetricsReport).

    With a deadline, a watchdog aborts a run that overstays it; the
    report then comes back marked incomplete with the stuck workers
    listed instead of hanging the caller.
    """
    run = ThreadedRun(config, policy)
    run.start()
    if deadline is not None:
        guard = threading.Thread(target=deadline_guard, args=(run, deadline),
                                 name="deadline-guard", daemon=True)
        guard.start()
    entries, report = run.result()
    if run.diverged:
        raise DivergenceError(
            f"weights went non-finite on workers {sorted(run.diverged)}")
    return entries, report
