import numpy as np
import pytest

from oracles import (
    decision_sequence,
    every_defer_is_released,
    max_gap_at_grants,
    per_worker_totals,
    scan_trace,
    staleness_per_update,
)
from stalesync.config import make_config, validate_config
from stalesync.simnet import DeadlockError, TimingModel, run_simulation
from stalesync.trace import format_trace, parse_trace


def _config(**kw):
    return validate_config(make_config(**kw))


def _fast_slow(paradigm, ratio=4.0, s_lower=3, r_max=0, epochs=4, seed=1):
    """P=2, worker 0 at 1.0 s per batch, worker 1 at ratio s, no comm."""
    return _config(paradigm=paradigm, worker_count=2, s_lower=s_lower,
                   r_max=r_max, timing_preset="straggler", straggler_ratio=ratio,
                   compute_base=1.0, comm_delay=0.0,
                   model_kind="quadratic_bowl", dimension=4,
                   dataset_size=16, batch_size=4, epochs=epochs, seed=seed)


def test_bsp_homogeneous_lockstep():
    cfg = _config(paradigm="bsp", worker_count=2, timing_preset="homogeneous",
                  compute_base=1.0, comm_delay=0.0, model_kind="quadratic_bowl",
                  dimension=4, dataset_size=8, batch_size=4, epochs=6, seed=0)
    entries, report = run_simulation(cfg)
    assert report.duration_s == 6.0
    for worker in (0, 1):
        assert report.per_worker[worker].iterations == 6
        assert report.per_worker[worker].compute_s == 6.0
        assert report.per_worker[worker].wait_s == 0.0
    # Per-iteration staleness never exceeds 1 under a barrier.
    rows = scan_trace(format_trace(entries))
    assert max(staleness_per_update(rows)) <= 1


def test_ssp_fast_slow_golden_trace():
    entries, report = run_simulation(_fast_slow("ssp"))
    pushes = [(e.time, e.worker, e.decision) for e in entries
              if e.kind == "push_arrive"]
    assert pushes[:12] == [
        (1.0, 0, "grant"),
        (2.0, 0, "grant"),
        (3.0, 0, "grant"),
        (4.0, 1, "grant"),
        (4.0, 0, "grant"),
        (5.0, 0, "defer"),
        (8.0, 1, "grant[0]"),
        (9.0, 0, "defer"),
        (12.0, 1, "grant[0]"),
        (13.0, 0, "defer"),
        (16.0, 1, "grant[0]"),
        (17.0, 0, "defer"),
    ]
    # The fast worker stalls 3 s per slow-worker cycle: deferred at 5.0,
    # released by the push at 8.0, and so on, four times in this budget.
    assert report.per_worker[0].wait_s == 12.0
    assert report.per_worker[0].compute_s == 8.0
    assert report.per_worker[0].comm_s == 0.0
    assert report.per_worker[1].wait_s == 0.0
    assert report.per_worker[1].compute_s == 32.0
    assert report.duration_s == 32.0
    assert report.per_worker[0].iterations == 8
    assert report.per_worker[1].iterations == 8
    assert report.per_worker[0].epochs == 4


def test_dssp_waits_no_more_than_ssp_fast_slow():
    for ratio in (1.5, 2.0, 3.0, 4.0):
        ssp = run_simulation(_fast_slow("ssp", ratio=ratio, epochs=10))[1]
        dssp = run_simulation(_fast_slow("dssp", ratio=ratio, r_max=12, epochs=10))[1]
        assert dssp.per_worker[0].wait_s <= ssp.per_worker[0].wait_s


def test_dssp_gap_at_grants_respects_ceiling():
    cfg = _fast_slow("dssp", ratio=4.0, s_lower=3, r_max=12, epochs=30)
    entries, report = run_simulation(cfg)
    rows = scan_trace(format_trace(entries))
    assert max_gap_at_grants(rows) <= 3 + 12 + 1
    assert report.max_staleness <= 3 + 12 + 1


def test_determinism_byte_identical_traces():
    cfg = _config(paradigm="dssp", worker_count=4, s_lower=2, r_max=6,
                  timing_preset="lognormal", compute_base=0.5, comm_delay=0.02,
                  model_kind="linear_regression", dimension=5,
                  dataset_size=40, batch_size=5, epochs=2, seed=77)
    first = format_trace(run_simulation(cfg)[0])
    second = format_trace(run_simulation(cfg)[0])
    assert first == second
    assert parse_trace(first) == run_simulation(cfg)[0]


def test_accounting_identity_with_comm_delays():
    cfg = _config(paradigm="ssp", worker_count=3, s_lower=2,
                  timing_preset="jitter", compute_base=0.3, comm_delay=0.05,
                  model_kind="linear_regression", dimension=4,
                  dataset_size=24, batch_size=4, epochs=3, seed=5)
    entries, report = run_simulation(cfg)
    rows = scan_trace(format_trace(entries))
    totals = per_worker_totals(rows)
    for worker, scanned in totals.items():
        stats = report.per_worker[worker]
        assert stats.wait_s == pytest.approx(scanned["wait"], abs=1e-9)
        assert stats.comm_s == pytest.approx(scanned["comm"], abs=1e-9)
        assert stats.compute_s == pytest.approx(scanned["compute"], abs=1e-9)
        total = stats.wait_s + stats.comm_s + stats.compute_s
        assert total == pytest.approx(scanned["finish"], abs=1e-9)


def test_no_deadlock_random_corpus():
    rng = np.random.default_rng(123)
    for _ in range(40):
        paradigm = str(rng.choice(["bsp", "asp", "ssp", "dssp"]))
        workers = int(rng.integers(1, 9))
        preset = str(rng.choice(["homogeneous", "jitter", "gtx-mix",
                                 "straggler", "lognormal"]))
        cfg = _config(paradigm=paradigm, worker_count=workers,
                      s_lower=int(rng.integers(0, 5)),
                      r_max=int(rng.integers(0, 13)),
                      timing_preset=preset, compute_base=1.0,
                      comm_delay=float(rng.choice([0.0, 0.1])),
                      straggler_ratio=float(rng.uniform(1.0, 4.0)),
                      model_kind="quadratic_bowl", dimension=3,
                      dataset_size=workers * 4, batch_size=2,
                      epochs=2, seed=int(rng.integers(0, 1 << 32)))
        entries, report = run_simulation(cfg, max_events=50_000)
        rows = scan_trace(format_trace(entries))
        assert every_defer_is_released(rows)
        times = [e.time for e in entries]
        assert times == sorted(times)
        for worker in range(workers):
            assert report.per_worker[worker].iterations == \
                cfg.epochs * (cfg.dataset_size // workers) // 2


def test_degenerate_dssp_matches_ssp_decisions():
    for seed in range(5):
        ssp = run_simulation(_fast_slow("ssp", ratio=3.0, epochs=6, seed=seed))[0]
        dssp = run_simulation(_fast_slow("dssp", ratio=3.0, r_max=0,
                                         epochs=6, seed=seed))[0]
        assert decision_sequence(scan_trace(format_trace(ssp))) == \
            decision_sequence(scan_trace(format_trace(dssp)))


def test_asp_never_defers_and_staleness_nonnegative():
    cfg = _config(paradigm="asp", worker_count=4, timing_preset="gtx-mix",
                  compute_base=0.5, comm_delay=0.0, model_kind="quadratic_bowl",
                  dimension=3, dataset_size=32, batch_size=4, epochs=4, seed=9)
    entries, _ = run_simulation(cfg)
    rows = scan_trace(format_trace(entries))
    assert all(decision == "grant" for _, decision in decision_sequence(rows))
    assert all(s >= 0 for s in staleness_per_update(rows))


def test_deadlock_reported_with_stuck_workers():
    class NeverGrant:
        def __init__(self, inner):
            self.inner = inner
            self.clocks = inner.clocks

        def on_push(self, p, now):
            decision = self.inner.on_push(p, now)
            return type(decision)("defer", ())

    from stalesync.policy import SyncPolicy

    cfg = _fast_slow("ssp", epochs=1)
    with pytest.raises(DeadlockError) as err:
        run_simulation(cfg, policy=NeverGrant(SyncPolicy(cfg)))
    assert err.value.stuck == (0, 1)


def test_timing_model_presets():
    spec = _config(paradigm="bsp", worker_count=4, timing_preset="gtx-mix",
                   compute_base=1.0).timing_model
    timing = TimingModel(spec, 4, seed=0)
    assert [timing.compute_time(w) for w in range(4)] == [1.0, 1.0, 2.2, 2.2]

    spec = _config(paradigm="bsp", worker_count=3, timing_preset="straggler",
                   straggler_ratio=3.0, compute_base=2.0).timing_model
    timing = TimingModel(spec, 3, seed=0)
    assert [timing.compute_time(w) for w in range(3)] == [2.0, 2.0, 6.0]

    spec = _config(paradigm="bsp", worker_count=2, timing_preset="jitter",
                   compute_base=1.0).timing_model
    timing = TimingModel(spec, 2, seed=0)
    draws = [timing.compute_time(0) for _ in range(50)]
    assert all(0.8 <= d <= 1.2 for d in draws)
    assert len(set(draws)) > 1

    spec = _config(paradigm="bsp", worker_count=2, timing_preset="lognormal",
                   compute_base=0.5).timing_model
    timing = TimingModel(spec, 2, seed=0)
    draws = [timing.compute_time(1) for _ in range(50)]
    assert all(d > 0 for d in draws)
