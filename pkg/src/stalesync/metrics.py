"""Metrics aggregation: waiting/compute/communication accounting, staleness
histograms, loss curves, regret, and the CSV report formats.

summarize derives everything it can from the event trace alone by a
single linear scan; loss-related series ride in alongside as a LossLog
because losses are not part of the trace format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import trace as tr

REPORT_COLUMNS = ("paradigm", "worker", "iterations", "epochs", "wait_s",
                  "compute_s", "comm_s", "updates_total", "max_staleness",
                  "time_to_target_s", "final_loss")

CONVEX_MODEL_KINDS = ("quadratic_bowl", "linear_regression", "logistic_regression")


@dataclass
class LossLog:
    """Loss observations gathered while a run executes."""

    batch_losses: list = field(default_factory=list)
    curve: list = field(default_factory=list)  # (update index, full loss)
    time_to_target: float | None = None
    final_loss: float = float("nan")
    rejected_pushes: set = field(default_factory=set)  # (worker, count) pairs
    worker_epochs: dict = field(default_factory=dict)


@dataclass
class WorkerMetrics:
    iterations: int = 0
    epochs: int = 0
    wait_s: float = 0.0
    compute_s: float = 0.0
    comm_s: float = 0.0


@dataclass
class MetricsReport:
    per_worker: dict
    updates_total: int
    duration_s: float
    staleness_hist: dict
    max_staleness: int
    loss_curve: list
    batch_losses: list
    time_to_target_s: float | None
    final_loss: float
    rejected_updates: int = 0
    incomplete: bool = False
    stuck_workers: tuple = ()

    def total_wait_s(self) -> float:
        return sum(w.wait_s for w in self.per_worker.values())


@dataclass
class RegretCurve:
    """Partial sums of excess loss over the reference optimum, and the
    per-step average R[T]/T."""

    totals: np.ndarray
    average: np.ndarray


def _zeroed_report(losses: LossLog | None = None) -> MetricsReport:
    losses = losses or LossLog()
    return MetricsReport(per_worker={}, updates_total=0, duration_s=0.0,
                         staleness_hist={}, max_staleness=0,
                         loss_curve=list(losses.curve),
                         batch_losses=list(losses.batch_losses),
                         time_to_target_s=losses.time_to_target,
                         final_loss=losses.final_loss,
                         rejected_updates=len(losses.rejected_pushes))


def summarize(entries, losses: LossLog | None = None) -> MetricsReport:
    """Aggregate a complete trace into a MetricsReport.

    Waiting time for a deferred push runs from its arrival to the release
    instant, which is read off the granting push line naming the worker in
    its released list; the grant's travel back to the worker counts as
    communication. All other inter-event time on a worker's chain is
    communication, except the stretch ending in compute_done.
    """
    losses = losses or LossLog()
    if not entries:
        return _zeroed_report(losses)

    workers = sorted({e.worker for e in entries})
    per_worker = {w: WorkerMetrics(epochs=losses.worker_epochs.get(w, 0))
                  for w in workers}
    counts = {w: 0 for w in workers}
    last_time = {w: 0.0 for w in workers}
    defer_time = {}
    release_time = {}
    staleness_hist = {}
    max_staleness = 0
    updates_total = 0

    for entry in entries:
        w = entry.worker
        stats = per_worker[w]
        gap = entry.time - last_time[w]
        if entry.kind == tr.COMPUTE_DONE:
            stats.compute_s += gap
        elif entry.kind == tr.PUSH_ARRIVE:
            stats.comm_s += gap
            stats.iterations += 1
            counts[w] = entry.count
            for released in tr.released_workers(entry.decision):
                release_time[released] = entry.time
            if entry.decision == "defer":
                defer_time[w] = entry.time
            if (w, entry.count) not in losses.rejected_pushes:
                updates_total += 1
                staleness = max(counts.values()) - entry.count
                staleness_hist[staleness] = staleness_hist.get(staleness, 0) + 1
                max_staleness = max(max_staleness, staleness)
        elif entry.kind == tr.GRANT_DELIVER:
            if w in defer_time:
                released_at = release_time.pop(w)
                stats.wait_s += released_at - defer_time.pop(w)
                stats.comm_s += entry.time - released_at
            else:
                stats.comm_s += gap
        else:  # pull_arrive, pull_return
            stats.comm_s += gap
        last_time[w] = entry.time

    return MetricsReport(
        per_worker=per_worker,
        updates_total=updates_total,
        duration_s=max(e.time for e in entries),
        staleness_hist=staleness_hist,
        max_staleness=max_staleness,
        loss_curve=list(losses.curve),
        batch_losses=list(losses.batch_losses),
        time_to_target_s=losses.time_to_target,
        final_loss=losses.final_loss,
        rejected_updates=len(losses.rejected_pushes),
    )


def staleness_of_update(entries, update_index: int) -> int:
    """Clock gap between the frontier and the pusher at the instant update
    number update_index (0-based, in application order) was applied."""
    counts = {}
    seen = 0
    for entry in entries:
        if entry.kind != tr.PUSH_ARRIVE:
            continue
        counts[entry.worker] = entry.count
        if seen == update_index:
            return max(counts.values()) - entry.count
        seen += 1
    raise IndexError(f"trace has only {seen} updates")


def compute_regret(batch_losses, reference_optimum: float,
                   model_kind: str = "linear_regression") -> RegretCurve:
    """Partial sums R[T] of per-update excess loss over the reference, and
    R[T]/T. Defined for convex model kinds only."""
    if model_kind not in CONVEX_MODEL_KINDS:
        raise ValueError(f"regret undefined for non-convex model kind {model_kind!r}")
    excess = np.asarray(batch_losses, dtype=np.float64) - float(reference_optimum)
    totals = np.cumsum(excess)
    steps = np.arange(1, totals.size + 1, dtype=np.float64)
    return RegretCurve(totals=totals, average=totals / steps)


def reference_optimum(model, dataset, tolerance: float = 1e-10,
                      max_iterations: int = 500_000):
    """Full-batch gradient descent run to gradient norm < tolerance.

    Returns (w_star, loss_at_w_star). The step size is 1/L with L a safe
    smoothness bound from the feature second moment.
    """
    if model.kind not in CONVEX_MODEL_KINDS:
        raise ValueError(f"no convex reference for model kind {model.kind!r}")
    features, labels = dataset.features, dataset.labels
    if model.kind == "quadratic_bowl":
        smoothness = 1.0
    else:
        gram = features.T @ features / len(labels)
        smoothness = float(np.linalg.eigvalsh(gram).max())
        if model.kind == "logistic_regression":
            smoothness /= 4.0
    step = 1.0 / max(smoothness, 1e-12)
    w = np.zeros(model.param_dim)
    for _ in range(max_iterations):
        grad = model.gradient(w, features, labels)
        norm = float(np.linalg.norm(grad))
        if norm < tolerance:
            break
        w = w - step * grad
    else:
        raise RuntimeError(
            f"reference optimum did not reach gradient norm {tolerance} "
            f"within {max_iterations} iterations (at {norm:.3e})")
    return w, model.loss(w, features, labels)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_csv(paradigm: str, report: MetricsReport) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for worker in sorted(report.per_worker):
        stats = report.per_worker[worker]
        row = (paradigm, worker, stats.iterations, stats.epochs,
               stats.wait_s, stats.compute_s, stats.comm_s,
               report.updates_total, report.max_staleness,
               report.time_to_target_s, report.final_loss)
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


COMPARE_COLUMNS = ("paradigm", "time_to_target_s", "final_loss", "updates_total",
                   "max_staleness", "total_wait_s", "duration_s")


def compare_csv(rows) -> str:
    """rows: iterable of (paradigm, MetricsReport)."""
    lines = [",".join(COMPARE_COLUMNS)]
    for paradigm, report in rows:
        lines.append(",".join(_cell(v) for v in (
            paradigm, report.time_to_target_s, report.final_loss,
            report.updates_total, report.max_staleness,
            report.total_wait_s(), report.duration_s)))
    return "\n".join(lines) + "\n"


SWEEP_COLUMNS = ("s_lower", "time_to_target_s", "final_loss", "updates_total",
                 "max_staleness", "total_wait_s", "duration_s")


def sweep_csv(rows) -> str:
    """rows: iterable of (s_lower, MetricsReport)."""
    lines = [",".join(SWEEP_COLUMNS)]
    for s_lower, report in rows:
        lines.append(",".join(_cell(v) for v in (
            s_lower, report.time_to_target_s, report.final_loss,
            report.updates_total, report.max_staleness,
            report.total_wait_s(), report.duration_s)))
    return "\n".join(lines) + "\n"
