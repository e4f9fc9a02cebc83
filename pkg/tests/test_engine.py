import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secure_replay.backend import ClearBackend, MockBackend
from secure_replay.compiler import CompiledNet
from secure_replay.engine import ReplayEngine, dominance_matrix, priority_mask, value_bit_width
from secure_replay.errors import DimensionMismatch, ZeroDivisor
from secure_replay.net import reachable_markings

import reference as ref

ACT = {a: i for i, a in enumerate(ref.VISIBLE)}


def clear_step(compiled, marking, activity, inspect=None):
    eng = ReplayEngine(compiled, ClearBackend())
    res = eng.step(np.asarray(marking), ref.one_hot(8, ACT[activity]), inspect=inspect)
    return res.next_marking, int(res.missing)


def test_selector_worked_example(compiled):
    seen = {}
    nxt, missing = clear_step(compiled, ref.place_vector("p1"), "d", inspect=seen)
    np.testing.assert_array_equal(seen["matches"], [0, 1, 0, 1, 0, 2, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(seen["selector"], ref.one_hot(11, 5))
    np.testing.assert_array_equal(nxt, ref.place_vector("p2", "p5"))
    assert missing == 0


def test_first_event(compiled):
    nxt, missing = clear_step(compiled, compiled.initial, "a")
    np.testing.assert_array_equal(nxt, ref.place_vector("p1"))
    assert missing == 0


def test_missing_token_insertion(compiled):
    # e needs p4 and p5; only p3, p4 present -> p5 inserted, all of e's preset counted
    nxt, missing = clear_step(compiled, ref.place_vector("p3", "p4"), "e")
    np.testing.assert_array_equal(nxt, ref.place_vector("p3", "p4", "p6"))
    assert missing == 2


def test_final_check(compiled):
    eng = ReplayEngine(compiled, ClearBackend())
    flag, remaining = eng.check_final_marking(ref.place_vector("p3", "p4", "p8"))
    assert (int(flag), int(remaining)) == (1, 2)
    flag, remaining = eng.check_final_marking(ref.place_vector("p8"))
    assert (int(flag), int(remaining)) == (1, 0)
    flag, remaining = eng.check_final_marking(ref.place_vector("p6"))
    assert (int(flag), int(remaining)) == (0, 0)


def test_priority_mask_default_keeps_first():
    b = ClearBackend()
    out = priority_mask(b, np.array([0, 1, 1, 0, 1]))
    np.testing.assert_array_equal(out, [0, 1, 0, 0, 0])
    np.testing.assert_array_equal(priority_mask(b, np.zeros(3, dtype=int)), [0, 0, 0])


def test_dominance_only_within_a_target(compiled):
    d = dominance_matrix(compiled)
    targets = compiled.scenario_targets()
    rows, cols = np.nonzero(d)
    assert all(targets[i] == targets[j] for i, j in zip(rows, cols))
    # direct d (row 6) outranks tau0,d (row 5)
    assert d[5, 6] == 1 and d[6, 5] == 0


def test_selector_is_one_hot_or_zero(compiled, running_net):
    eng = ReplayEngine(compiled, ClearBackend())
    for m in reachable_markings(running_net):
        vec = np.array([m[p] for p in compiled.places])
        for j in range(8):
            seen = {}
            eng.step(vec, ref.one_hot(8, j), inspect=seen)
            assert int(seen["selector"].sum()) in (0, 1)


def test_shape_errors(compiled):
    eng = ReplayEngine(compiled, ClearBackend())
    with pytest.raises(DimensionMismatch):
        eng.step(np.zeros(8, dtype=int), ref.one_hot(8, 0))
    with pytest.raises(DimensionMismatch):
        eng.step(np.zeros(9, dtype=int), ref.one_hot(9, 0))


def test_zero_divisor_rejected(compiled):
    d = compiled.to_dict()
    d["divisors"][0] = 0
    with pytest.raises(ZeroDivisor):
        ReplayEngine(CompiledNet.from_dict(d), ClearBackend())


def test_bit_width(compiled):
    assert value_bit_width(compiled) == 3


def _mock_engine(compiled):
    b = MockBackend(bit_width=value_bit_width(compiled))
    return ReplayEngine(compiled, b), b


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=9, max_size=9), st.integers(0, 7))
def test_mock_step_trace_is_input_independent(compiled, marking, j):
    eng, b = _mock_engine(compiled)
    ref_eng, ref_b = _mock_engine(compiled)
    ref_eng.step(ref_b.encrypt(compiled.initial), ref_b.encrypt(ref.one_hot(8, 0)))
    eng.step(b.encrypt(marking), b.encrypt(ref.one_hot(8, j)))
    assert b.account.trace == ref_b.account.trace


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=9, max_size=9), st.integers(0, 7))
def test_mock_matches_clear(compiled, marking, j):
    eng, b = _mock_engine(compiled)
    res = eng.step(b.encrypt(marking), b.encrypt(ref.one_hot(8, j)))
    nxt, missing = clear_step(compiled, marking, ref.VISIBLE[j])
    np.testing.assert_array_equal(b.decrypt(res.next_marking), nxt)
    assert int(b.decrypt(res.missing)) == missing


def test_selector_mac_count(compiled):
    eng, b = _mock_engine(compiled)
    eng.step(b.encrypt(compiled.initial), b.encrypt(ref.one_hot(8, 0)))
    rows = compiled.n_scenarios
    assert b.account.macs_by_tag["selector"] == rows * (compiled.n_places + compiled.n_visible) == 187
    assert b.account.snapshot()["total_ops"] == 25
