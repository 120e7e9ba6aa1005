import numpy as np
import pytest

from oracles import controller_oracle
from stalesync.config import make_config, validate_config
from stalesync.policy import (
    DEFER,
    GRANT,
    CreditTable,
    IterationClockTable,
    ProtocolError,
    PushHistoryTable,
    SyncPolicy,
    max_staleness_bound,
    synchronization_controller,
)


def _policy(paradigm, workers, s_lower=0, r_max=0):
    cfg = validate_config(make_config(paradigm=paradigm, worker_count=workers,
                                      s_lower=s_lower, r_max=r_max))
    return SyncPolicy(cfg)


def _controller_result(latest_p, prev_p, latest_slow, prev_slow, r_max):
    """Run the controller against a hand-built two-worker state where
    worker 1 is slowest and worker 0 is about to record latest_p."""
    history = PushHistoryTable(2)
    history.record(0, prev_p)
    history.record(1, prev_slow)
    history.record(1, latest_slow)
    clocks = IterationClockTable(2)
    for _ in range(5):
        clocks.increment(0)
    clocks.increment(1)
    return synchronization_controller(history, 0, latest_p, clocks, r_max)


def test_controller_worked_example():
    # p pushing at 10 after 9, slowest at (8, 4): candidates [10..14],
    # slow projections [12,16,20,24,28], nearest approach at r=2.
    assert _controller_result(10.0, 9.0, 8.0, 4.0, 4) == 2
    assert controller_oracle(10.0, 9.0, 8.0, 4.0, 4) == 2


def test_controller_equal_intervals_tie_breaks_low():
    # Same interval and same latest push time on both sides: r=1 matches
    # the slow worker's first projected push exactly, and so do r=2, r=3;
    # the tie must break to 1.
    assert _controller_result(5.0, 4.0, 5.0, 4.0, 6) == 1


def test_controller_r_max_zero():
    assert _controller_result(5.0, 4.0, 5.0, 4.0, 0) == 0


def test_controller_cold_start_returns_zero():
    history = PushHistoryTable(2)
    history.record(1, 3.0)  # slowest has only one recorded push
    clocks = IterationClockTable(2)
    clocks.increment(0)
    clocks.increment(0)
    clocks.increment(1)
    assert synchronization_controller(history, 0, 5.0, clocks, 8) == 0


def test_controller_clamps_degenerate_intervals():
    # Identical timestamps would give a zero interval; the floor keeps the
    # projection finite and the result in range.
    history = PushHistoryTable(2)
    history.record(0, 5.0)
    history.record(1, 5.0)
    history.record(1, 5.0)
    clocks = IterationClockTable(2)
    clocks.increment(0)
    clocks.increment(0)
    clocks.increment(1)
    r = synchronization_controller(history, 0, 5.0, clocks, 7)
    assert 0 <= r <= 7


def test_controller_matches_oracle_on_random_tables():
    rng = np.random.default_rng(20260822)
    for trial in range(600):
        r_max = int(rng.integers(0, 16))
        if trial % 2:
            # Integer timestamps provoke exact ties.
            latest_p = float(rng.integers(5, 50))
            prev_p = latest_p - float(rng.integers(1, 9))
            latest_s = float(rng.integers(5, 50))
            prev_s = latest_s - float(rng.integers(1, 9))
        else:
            latest_p = float(rng.uniform(5, 50))
            prev_p = latest_p - float(rng.uniform(0.01, 9))
            latest_s = float(rng.uniform(5, 50))
            prev_s = latest_s - float(rng.uniform(0.01, 9))
        got = _controller_result(latest_p, prev_p, latest_s, prev_s, r_max)
        want = controller_oracle(latest_p, prev_p, latest_s, prev_s, r_max)
        assert got == want, (latest_p, prev_p, latest_s, prev_s, r_max)


def test_controller_translation_invariance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        latest_p = float(rng.uniform(5, 50))
        prev_p = latest_p - float(rng.uniform(0.1, 9))
        latest_s = float(rng.uniform(5, 50))
        prev_s = latest_s - float(rng.uniform(0.1, 9))
        shift = float(rng.uniform(-100, 100))
        base = _controller_result(latest_p, prev_p, latest_s, prev_s, 10)
        moved = _controller_result(latest_p + shift, prev_p + shift,
                                   latest_s + shift, prev_s + shift, 10)
        assert base == moved


def test_ssp_defers_past_threshold():
    policy = _policy("ssp", 2, s_lower=3)
    # Drive clocks to t = {0: 5, 1: 2} with legal granted pushes.
    for worker in (0, 1, 0, 1, 0, 0, 0):
        assert policy.on_push(worker, 0.0).granted
    assert policy.clocks.counts == {0: 5, 1: 2}
    decision = policy.on_push(0, 1.0)
    assert decision.outcome == DEFER
    # The slow worker catching up releases it.
    decision = policy.on_push(1, 2.0)
    assert decision.granted
    assert decision.released == (0,)


def test_asp_always_grants():
    policy = _policy("asp", 3)
    for step in range(30):
        decision = policy.on_push(step % 3 if step % 7 else 0, float(step))
        assert decision.granted
        assert decision.released == ()


def test_bsp_is_a_barrier():
    policy = _policy("bsp", 2)
    first = policy.on_push(0, 0.0)
    assert first.outcome == DEFER
    second = policy.on_push(1, 1.0)
    assert second.granted
    assert second.released == (0,)


def test_bsp_three_workers_release_together():
    policy = _policy("bsp", 3)
    assert policy.on_push(0, 0.0).outcome == DEFER
    assert policy.on_push(1, 0.5).outcome == DEFER
    last = policy.on_push(2, 1.0)
    assert last.granted
    assert last.released == (0, 1)


def test_dssp_spends_credits_without_consulting(monkeypatch):
    policy = _policy("dssp", 2, s_lower=3, r_max=12)
    policy.credits[0] = 2
    monkeypatch.setattr(
        "stalesync.policy.synchronization_controller",
        lambda *a, **k: pytest.fail("controller consulted while credits remain"),
    )
    assert policy.on_push(0, 1.0).granted
    assert policy.credits[0] == 1
    assert policy.on_push(0, 2.0).granted
    assert policy.credits[0] == 0


def _warm_up_fast_slow(policy):
    """Worker 0 settles into 1.0-second pushes, worker 1 into 2.0-second
    pushes, ending at t = {3, 2} with histories (6.0, 5.0) and (4.0, 2.0)."""
    assert policy.on_push(1, 2.0).granted
    assert policy.on_push(0, 2.5).granted
    assert policy.on_push(1, 4.0).granted
    assert policy.on_push(0, 5.0).granted
    assert policy.on_push(0, 6.0).granted


def test_dssp_mint_then_credit_conservation():
    policy = _policy("dssp", 2, s_lower=1, r_max=4)
    _warm_up_fast_slow(policy)
    # Gap 2 violates the threshold and worker 0 is fastest, so the mint
    # fires: candidates [7, 8, 9, 10, 11] against the stalled slow
    # worker's projected [6, 8, 10, 12, 14] picks one extra push.
    decision = policy.on_push(0, 7.0)
    assert decision.granted
    assert policy.credits[0] == 1
    # Exactly one further push rides on the credit, spending it.
    assert policy.on_push(0, 8.0).granted
    assert policy.credits[0] == 0


def test_dssp_mint_capped_by_headroom():
    policy = _policy("dssp", 2, s_lower=1, r_max=4)
    _warm_up_fast_slow(policy)
    # The slow worker stalls after its second push; worker 0 keeps
    # pushing every second. Mints keep it going only until the ceiling
    # s_lower + r_max is spent, then it defers.
    granted = 0
    now = 7.0
    while policy.on_push(0, now).granted:
        granted += 1
        now += 1.0
        assert granted < 50, "grants must stop at the staleness ceiling"
    assert granted > 0
    assert policy.clocks[0] - policy.clocks[1] <= 1 + 4 + 1


def test_dssp_non_fastest_defers_without_minting(monkeypatch):
    policy = _policy("dssp", 3, s_lower=1, r_max=8)
    # t = {0: 1, 1: 0, 2: 3}: a push from worker 0 lands at gap 2 with
    # worker 2 still ahead, so it defers without consulting the controller.
    policy.clocks.counts.update({0: 1, 1: 0, 2: 3})
    monkeypatch.setattr(
        "stalesync.policy.synchronization_controller",
        lambda *a, **k: pytest.fail("controller consulted for a non-fastest worker"),
    )
    decision = policy.on_push(0, 5.0)
    assert decision.outcome == DEFER
    assert policy.credits[0] == 0


def test_push_while_deferred_is_protocol_error():
    policy = _policy("ssp", 2, s_lower=0)
    assert policy.on_push(0, 0.0).outcome == DEFER  # gap 1 > 0
    with pytest.raises(ProtocolError):
        policy.on_push(0, 1.0)


def test_unknown_worker_rejected():
    policy = _policy("ssp", 2, s_lower=1)
    with pytest.raises(ProtocolError):
        policy.on_push(5, 0.0)


def test_degeneracy_dssp_zero_credits_equals_ssp():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        ssp = _policy("ssp", 4, s_lower=2)
        dssp = _policy("dssp", 4, s_lower=2, r_max=0)
        now = 0.0
        for _ in range(200):
            ready = sorted(set(range(4)) - ssp.deferred)
            assert ready == sorted(set(range(4)) - dssp.deferred)
            worker = int(rng.choice(ready))
            now += float(rng.uniform(0.01, 1.0))
            a = ssp.on_push(worker, now)
            b = dssp.on_push(worker, now)
            assert a == b


def test_max_staleness_bound():
    ssp = validate_config(make_config(paradigm="ssp", worker_count=2, s_lower=3))
    assert max_staleness_bound(ssp) == 3
    dssp = validate_config(make_config(paradigm="dssp", worker_count=2,
                                       s_lower=3, r_max=12))
    assert max_staleness_bound(dssp) == 15
    tight = validate_config(make_config(paradigm="dssp", worker_count=2,
                                        s_lower=0, r_max=0))
    assert max_staleness_bound(tight) == 0
    bsp = validate_config(make_config(paradigm="bsp", worker_count=2))
    with pytest.raises(ValueError, match="0"):
        max_staleness_bound(bsp)
    asp = validate_config(make_config(paradigm="asp", worker_count=2))
    with pytest.raises(ValueError, match="unbounded"):
        max_staleness_bound(asp)


def test_credit_table_rejects_negative():
    credits = CreditTable(2)
    with pytest.raises(ValueError):
        credits[0] = -1
