import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secure_replay.backend import (Backend, ClearBackend, MockBackend, MockValue,
                                   available_backends, get_backend, register_backend)
from secure_replay.errors import (BackendUnavailable, BadCiphertext, BitWidthOverflow,
                                  DimensionMismatch, ZeroDivisor)

vectors = st.lists(st.integers(0, 3), min_size=1, max_size=6)


def backends():
    clear = ClearBackend()
    client = MockBackend.client(seed=7, bit_width=4)
    return [(clear, clear), (client, MockBackend.server(client.evaluation_key(), bit_width=4))]


@pytest.mark.parametrize("client,server", backends(), ids=["clear", "mock"])
class TestContract:
    def run(self, client, server, op, *args):
        enc = [server.from_wire(client.to_wire(client.encrypt(a))) if isinstance(a, list) else a
               for a in args]
        out = getattr(server, op)(*enc)
        return client.decrypt(client.from_wire(server.to_wire(out)))

    def test_mat_vec(self, client, server):
        A = np.array([[1, 0, 1], [0, 2, 0]])
        np.testing.assert_array_equal(self.run(client, server, "mat_vec", A, [1, 1, 3]), [4, 2])

    def test_add_and_concat(self, client, server):
        np.testing.assert_array_equal(self.run(client, server, "add", [1, 2], [3, 0]), [4, 2])
        np.testing.assert_array_equal(self.run(client, server, "concat", [1], [2, 3]), [1, 2, 3])

    def test_sub_clamped(self, client, server):
        np.testing.assert_array_equal(self.run(client, server, "sub_clamped", [3, 1, 0], [1, 2, 0]), [2, 0, 0])

    def test_elem_div_floors(self, client, server):
        np.testing.assert_array_equal(self.run(client, server, "elem_div", [3, 1, 2], np.array([2, 2, 3])), [1, 0, 0])

    def test_min_sum_scalar(self, client, server):
        np.testing.assert_array_equal(self.run(client, server, "min_const", [0, 3, 1], 1), [0, 1, 1])
        assert int(self.run(client, server, "sum", [1, 2, 3])) == 6
        np.testing.assert_array_equal(self.run(client, server, "scalar_mul", [1, 2], 0), [0, 0])

    def test_zero_divisor(self, client, server):
        with pytest.raises(ZeroDivisor):
            self.run(client, server, "elem_div", [1, 1], np.array([1, 0]))

    def test_dimension_mismatch(self, client, server):
        with pytest.raises(DimensionMismatch):
            self.run(client, server, "add", [1, 2], [1])
        with pytest.raises(DimensionMismatch):
            self.run(client, server, "mat_vec", np.ones((2, 2)), [1, 2, 3])


@settings(max_examples=60, deadline=None)
@given(vectors, st.data())
def test_mock_matches_clear(xs, data):
    ys = data.draw(st.lists(st.integers(0, 3), min_size=len(xs), max_size=len(xs)))
    clear = ClearBackend()
    mock = MockBackend(bit_width=5)
    for op in ("add", "sub_clamped"):
        a = getattr(clear, op)(np.array(xs), np.array(ys))
        b = mock.decrypt(getattr(mock, op)(mock.encrypt(xs), mock.encrypt(ys)))
        np.testing.assert_array_equal(a, b)


def test_mock_values_are_opaque():
    b = MockBackend()
    v = b.encrypt([1, 2])
    assert isinstance(v, MockValue)
    with pytest.raises(TypeError):
        np.asarray(v)
    with pytest.raises(TypeError):
        pickle.dumps(v)


def test_server_cannot_decrypt():
    client = MockBackend.client(seed=1)
    server = MockBackend.server(client.evaluation_key())
    with pytest.raises(PermissionError):
        server.decrypt(server.encrypt([1]))


def test_blob_tamper_and_wrong_key():
    client = MockBackend.client(seed=1)
    blob = client.to_wire(client.encrypt([1, 0, 1]))
    assert set(blob) == {"blob", "backend"}
    assert "1, 0, 1" not in blob["blob"]
    raw = bytearray(blob["blob"].encode())
    raw[10] = ord("A") if raw[10] != ord("A") else ord("B")
    with pytest.raises(BadCiphertext):
        client.from_wire({"blob": raw.decode(), "backend": "mock"})
    with pytest.raises(BadCiphertext):
        MockBackend.client(seed=2).from_wire(blob)
    with pytest.raises(BadCiphertext):
        client.from_wire([1, 0, 1])


def test_seeded_keys_are_deterministic():
    assert MockBackend.client(seed=5).evaluation_key() == MockBackend.client(seed=5).evaluation_key()
    assert MockBackend.client(seed=5).evaluation_key() != MockBackend.client(seed=6).evaluation_key()


def test_clear_rejects_blobs_and_floats():
    with pytest.raises(BadCiphertext):
        ClearBackend().from_wire({"blob": "x", "backend": "mock"})
    with pytest.raises(BadCiphertext):
        ClearBackend().from_wire([0.5, 1])


def test_bit_width_overflow():
    b = MockBackend(bit_width=2)
    with pytest.raises(BitWidthOverflow):
        b.add(b.encrypt([3]), b.encrypt([1]))
    with pytest.raises(BitWidthOverflow):
        b.encrypt([4])


def test_op_account():
    b = ClearBackend()
    b.mat_vec(np.ones((3, 4), dtype=int), np.ones(4, dtype=int), tag="selector")
    b.sum(np.ones(3, dtype=int))
    snap = b.account.snapshot()
    assert snap["ops"] == {"mat_vec": 1, "sum": 1}
    assert snap["macs"] == 12 and snap["macs_by_tag"] == {"selector": 12}
    assert b.account.trace[0] == ("mat_vec", ((3, 4), (4,)), (3,), "selector")


def test_registry():
    assert {"clear", "mock"} <= set(available_backends())
    assert get_backend("clear") is ClearBackend
    with pytest.raises(BackendUnavailable, match="plug-in"):
        get_backend("encrypted")

    class Custom(ClearBackend):
        tag = "custom"

    register_backend("custom-test", Custom)
    assert get_backend("custom-test") is Custom
    assert issubclass(Custom, Backend)
