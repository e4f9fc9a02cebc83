import json
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secure_replay.client import (LocalSession, ReplayCounters, encode_event, replay_log,
                                  replay_trace, token_fitness)
from secure_replay.compiler import compile_net
from secure_replay.errors import EmptyLog, EmptyTrace, UnknownActivity
from secure_replay.log_io import EventLog
from secure_replay.oracle import classic_replay

from netgen import random_run, random_safe_net
import reference as ref


def test_encode_event():
    np.testing.assert_array_equal(encode_event("d", ref.VISIBLE), [0, 0, 0, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(encode_event("a", ref.VISIBLE), [1, 0, 0, 0, 0, 0, 0, 0])
    with pytest.raises(UnknownActivity) as exc:
        encode_event("zzz", ref.VISIBLE)
    assert exc.value.activity == "zzz"


def test_fitting_trace(compiled):
    r = replay_trace("abdeh", LocalSession(compiled))
    assert (r.counters.missing, r.counters.remaining) == (0, 0)
    assert r.final_reached and r.fitness == 1.0 and r.fits


def test_unfitting_trace(compiled):
    r = replay_trace("abeh", LocalSession(compiled))
    c = r.counters
    assert (c.produced, c.consumed, c.missing, c.remaining) == (3, 5, 2, 2)
    assert r.fitness_exact == Fraction(7, 15)


def test_empty_trace(compiled):
    with pytest.raises(EmptyTrace):
        replay_trace([], LocalSession(compiled))


def test_unknown_activity_before_any_call(compiled):
    s = LocalSession(compiled)
    with pytest.raises(UnknownActivity):
        replay_trace(["a", "zzz"], s)
    assert sum(s.calls.values()) == 0


def test_fitness_guard():
    assert token_fitness(ReplayCounters(0, 0, 0, 1)) == (0, False)
    assert token_fitness(ReplayCounters(-1, 3, 0, 0)) == (0, False)
    assert token_fitness(ReplayCounters(2, 2, 0, 0)) == (1, True)


def test_fitness_clamped():
    # produced small and remaining large would push the formula below zero
    value, defined = token_fitness(ReplayCounters(1, 1, 1, 5))
    assert defined and value == 0


def test_log_dedup(compiled):
    s = LocalSession(compiled)
    lf = replay_log(EventLog({tuple("abdeh"): 2}), s)
    assert lf.fitness == 1.0
    assert s.calls == {"start": 1, "step": 5, "final": 1}


def test_log_aggregate(compiled):
    lf = replay_log({tuple("abdeh"): 1, tuple("abeh"): 1}, LocalSession(compiled))
    t = lf.totals
    assert (t.produced, t.consumed, t.missing, t.remaining) == (9, 11, 2, 2)
    assert lf.fitness_exact == Fraction(1, 2) * (1 - Fraction(2, 11)) + Fraction(1, 2) * (1 - Fraction(2, 9))


def test_log_weighting(compiled):
    lf = replay_log({tuple("abeh"): 3}, LocalSession(compiled))
    assert lf.totals == ReplayCounters(9, 15, 6, 6)
    assert lf.fitness_exact == Fraction(7, 15)


def test_failing_variant_is_reported(compiled):
    lf = replay_log([tuple("abdeh"), ("a", "zzz")], LocalSession(compiled))
    errors = [v.error for v in lf.variants]
    assert errors[0] is None and "UnknownActivity" in errors[1]
    assert lf.fitness == 1.0


def test_empty_log(compiled):
    with pytest.raises(EmptyLog):
        replay_log([], LocalSession(compiled))


def test_parallel_matches_serial(compiled):
    log = EventLog.from_traces(ref.BROKEN_LOG + ref.RUNNING_LOG)
    serial = replay_log(log, lambda: LocalSession(compiled))
    parallel = replay_log(log, lambda: LocalSession(compiled), workers=4)
    assert serial.to_json() == parallel.to_json()


def test_reports_are_deterministic(compiled):
    log = EventLog.from_traces(ref.BROKEN_LOG)
    a = replay_log(log, LocalSession(compiled))
    b = replay_log(log, LocalSession(compiled, "mock", seed=3))
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
    doc = json.loads(a.to_json())
    assert len(doc["variants"]) == 6 and doc["aggregate"]["variant"] is None
    assert a.to_csv().splitlines()[-1].startswith("<aggregate>,6,")


def test_step_calls_bounded(compiled):
    log = EventLog.from_traces(ref.RUNNING_LOG * 3)
    s = LocalSession(compiled)
    replay_log(log, s)
    assert s.calls["step"] <= len(log) * max(map(len, log))
    assert s.calls["final"] == len(log)


def test_counters_match_oracle_on_running_example(compiled, running_net):
    rng = random.Random(0)
    s = LocalSession(compiled)
    for _ in range(100):
        trace = [rng.choice(ref.VISIBLE) for _ in range(rng.randint(1, 10))]
        r, o = replay_trace(trace, s), classic_replay(running_net, trace)
        assert (r.counters.missing, r.counters.remaining, r.final_reached) == (o.missing, o.remaining, o.final_reached)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_language_traces_fit(seed):
    net = random_safe_net(seed)
    session = LocalSession(compile_net(net))
    rng = random.Random(seed)
    for _ in range(3):
        trace = random_run(net, rng)
        if trace is None:
            continue
        r = replay_trace(trace, session)
        assert r.fits and r.fitness == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 25), min_size=1, max_size=12))
def test_fitness_in_unit_interval_and_matches_oracle(seed, picks):
    net = random_safe_net(seed)
    acts = net.activities
    trace = [acts[i % len(acts)] for i in picks]
    r = replay_trace(trace, LocalSession(compile_net(net)))
    o = classic_replay(net, trace)
    assert 0 <= r.fitness <= 1
    assert (r.counters.missing, r.counters.remaining) == (o.missing, o.remaining)
    assert r.counters.missing <= r.counters.consumed
