import json

import pytest
from hypothesis import given, settings, strategies as st

from secure_replay.compiler import CompiledNet, compile_net
from secure_replay.errors import EmptyTrace, UnknownActivity
from secure_replay.net import Marking
from secure_replay.oracle import (classic_replay, observable_markings, replay_event,
                                  silent_enabling_sequence, validate_engine)

from netgen import random_safe_net


def test_fitting_trace_counts(running_net):
    r = classic_replay(running_net, "abdeh")
    assert (r.produced, r.consumed, r.missing, r.remaining) == (8, 8, 0, 0)
    assert r.final_reached and r.final_marking == Marking.of("p8")


def test_unfitting_trace_counts(running_net):
    r = classic_replay(running_net, "abeh")
    assert (r.missing, r.remaining) == (2, 2)
    assert r.firings[2]["inserted"] == {"p4": 1, "p5": 1}


def test_prefix_trace(running_net):
    r = classic_replay(running_net, "a")
    assert r.missing == 0 and not r.final_reached


def test_errors(running_net):
    with pytest.raises(UnknownActivity):
        classic_replay(running_net, ["a", "zzz"])
    with pytest.raises(EmptyTrace):
        classic_replay(running_net, [])


def test_silent_search(running_net):
    assert silent_enabling_sequence(running_net, Marking.of("p1"), "d") == ("tau0",)
    assert silent_enabling_sequence(running_net, Marking.of("p3"), "d") == ()
    assert silent_enabling_sequence(running_net, Marking.of("p0"), "d") is None
    m, seq, inserted = replay_event(running_net, Marking.of("p6"), "h")
    assert m == Marking.of("p8") and seq == ("tau1",) and not inserted


def test_full_artifact_on_all_reachable(running_net, compiled_full):
    rep = validate_engine(running_net, compiled_full)
    assert (rep.markings, rep.transitions, rep.cases, rep.passed) == (9, 8, 72, 72)
    assert json.loads(rep.to_json())["passed"] == 72


def test_pruned_artifact_on_observable(running_net, compiled):
    rep = validate_engine(running_net, compiled, domain="observable")
    assert rep.ok and rep.cases == 64
    assert Marking.of("p7") not in observable_markings(running_net)


def test_pruned_artifact_misses_only_p7(running_net, compiled):
    rep = validate_engine(running_net, compiled)
    assert {(m["marking"], m["activity"]) for m in rep.mismatches} == {("{p7:1}", "g"), ("{p7:1}", "h")}


def test_corrupted_row_is_localized(running_net, compiled_full):
    d = compiled_full.to_dict()
    row = next(i for i, s in enumerate(compiled_full.scenarios)
               if s.target == "e")
    d["enablement"][row][d["places"].index("p4")] = 0
    d["divisors"][row] -= 1
    rep = validate_engine(running_net, CompiledNet.from_dict(d))
    assert rep.mismatches
    assert {m["activity"] for m in rep.mismatches} == {"e"}


def test_unknown_domain(running_net, compiled):
    with pytest.raises(ValueError):
        validate_engine(running_net, compiled, domain="nope")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_nets_agree(seed):
    net = random_safe_net(seed)
    assert validate_engine(net, compile_net(net, prune=False)).ok
    assert validate_engine(net, compile_net(net), domain="observable").ok
