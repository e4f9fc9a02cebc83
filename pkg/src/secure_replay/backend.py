"""Data-oblivious integer arithmetic backends.

The replay engine only talks to a backend through the operations below, so
the same code runs on clear numpy arrays, on the mock-encrypted backend, or
on a homomorphic backend registered as a plug-in. Matrices, divisors and
constants are plaintext (they belong to the model owner running the
computation); vectors and scalars are backend values.
"""

import base64
from collections import Counter
import hashlib
import hmac
import itertools
import json
import os
import random
import threading

import numpy as np

from .errors import BackendUnavailable, BadCiphertext, BitWidthOverflow, DimensionMismatch, ZeroDivisor

OP_KINDS = ("mat_vec", "add", "sub_clamped", "elem_div", "min_const", "scalar_mul", "sum", "concat")


class OpAccount:
    """Per-session operation counters and the ordered operation trace."""

    def __init__(self):
        self.counts = Counter()
        self.macs = 0
        self.macs_by_tag = Counter()
        self.trace = []
        self._lock = threading.Lock()

    def record(self, op, in_shapes, out_shape, macs=0, tag=None):
        with self._lock:
            self.counts[op] += 1
            self.macs += macs
            if macs:
                self.macs_by_tag[tag] += macs
            self.trace.append((op, tuple(in_shapes), tuple(out_shape), tag))

    def snapshot(self):
        return {"ops": dict(sorted(self.counts.items())), "total_ops": sum(self.counts.values()),
                "macs": self.macs, "macs_by_tag": dict(sorted(self.macs_by_tag.items(), key=lambda kv: str(kv[0])))}

    def since(self, mark):
        """Trace entries recorded after position ``mark``."""
        return list(self.trace[mark:])

    def __len__(self):
        return len(self.trace)


def _plain(x):
    return np.asarray(x, dtype=np.int64)


class Backend:
    """Contract shared by every backend.

    Subclasses supply ``_open`` (value handle to int64 array) and ``_seal``
    (array to value handle); the arithmetic itself is written once here.
    A homomorphic plug-in overrides the operations directly.
    """

    tag = "abstract"

    def __init__(self, bit_width=None):
        self.bit_width = bit_width
        self.account = OpAccount()

    @classmethod
    def client(cls, seed=None, bit_width=None):
        """Backend for the trace owner (can encrypt and decrypt)."""
        return cls(bit_width=bit_width)

    @classmethod
    def server(cls, evaluation_key=None, bit_width=None):
        """Backend for the model owner, built from uploaded key material."""
        return cls(bit_width=bit_width)

    # -- handles ----------------------------------------------------------

    def _open(self, x):
        raise NotImplementedError

    def _seal(self, arr):
        raise NotImplementedError

    def _check_range(self, arr, op):
        if self.bit_width is None:
            return
        if arr.size and (arr.min() < 0 or arr.max() >= (1 << self.bit_width)):
            raise BitWidthOverflow(
                f"{op} produced values outside [0, 2^{self.bit_width}): "
                f"min {arr.min()}, max {arr.max()}")

    def _out(self, op, arr, ins, macs=0, tag=None):
        arr = np.asarray(arr, dtype=np.int64)
        self._check_range(arr, op)
        self.account.record(op, [np.shape(a) for a in ins], arr.shape, macs=macs, tag=tag)
        return self._seal(arr)

    def _value(self, x):
        if self.is_value(x):
            return self._open(x)
        return _plain(x)

    def is_value(self, x):
        raise NotImplementedError

    # -- client side --------------------------------------------------------

    def encrypt(self, values):
        arr = _plain(values)
        self._check_range(arr, "encrypt")
        return self._seal(arr)

    def decrypt(self, value):
        return self._open(value).copy()

    # -- wire format --------------------------------------------------------

    def to_wire(self, value):
        raise NotImplementedError

    def from_wire(self, obj):
        raise NotImplementedError

    def evaluation_key(self):
        """Key material the server needs; ``None`` when nothing is shared."""
        return None

    # -- contract -----------------------------------------------------------

    def mat_vec(self, A, x, tag=None):
        A = _plain(A)
        v = self._open(x)
        if A.ndim != 2 or v.ndim != 1 or A.shape[1] != v.shape[0]:
            raise DimensionMismatch(f"mat_vec: matrix {A.shape} with vector {v.shape}")
        return self._out("mat_vec", A @ v, (A, v), macs=A.size, tag=tag)

    def concat(self, x, y):
        a, b = self._value(x), self._value(y)
        if a.ndim != 1 or b.ndim != 1:
            raise DimensionMismatch("concat expects vectors")
        return self._out("concat", np.concatenate([a, b]), (a, b))

    def add(self, x, y):
        a, b = self._value(x), self._value(y)
        if a.shape != b.shape:
            raise DimensionMismatch(f"add: {a.shape} vs {b.shape}")
        return self._out("add", a + b, (a, b))

    def sub_clamped(self, x, y):
        a, b = self._value(x), self._value(y)
        if a.shape != b.shape:
            raise DimensionMismatch(f"sub_clamped: {a.shape} vs {b.shape}")
        return self._out("sub_clamped", np.maximum(a - b, 0), (a, b))

    def elem_div(self, x, d):
        a, dv = self._open(x), _plain(d)
        if dv.ndim and dv.shape != a.shape:
            raise DimensionMismatch(f"elem_div: {a.shape} vs {dv.shape}")
        if (dv < 1).any():
            raise ZeroDivisor("divisors must be >= 1")
        return self._out("elem_div", a // dv, (a, dv))

    def min_const(self, x, k):
        a = self._open(x)
        return self._out("min_const", np.minimum(a, int(k)), (a,))

    def scalar_mul(self, x, s):
        a, sv = self._open(x), self._value(s)
        if sv.ndim != 0:
            raise DimensionMismatch("scalar_mul expects a scalar multiplier")
        return self._out("scalar_mul", a * sv, (a, sv))

    def sum(self, x):
        a = self._open(x)
        return self._out("sum", np.asarray(a.sum(), dtype=np.int64), (a,))

    @staticmethod
    def signed_sub(a, b):
        """Difference of two decrypted scalars; client side only, may be negative."""
        return int(a) - int(b)


class ClearBackend(Backend):
    """Plain numpy arithmetic; values are int64 arrays."""

    tag = "clear"

    def is_value(self, x):
        return isinstance(x, np.ndarray)

    def _open(self, x):
        if not isinstance(x, np.ndarray):
            x = _plain(x)
        return x

    def _seal(self, arr):
        return arr

    def to_wire(self, value):
        return self._open(value).tolist()

    def from_wire(self, obj):
        if isinstance(obj, dict):
            raise BadCiphertext("clear backend expects integer arrays, got a blob")
        arr = np.asarray(obj)
        if arr.dtype == object or not (arr.size == 0 or np.issubdtype(arr.dtype, np.integer)):
            raise BadCiphertext("clear values must be integers")
        return arr.astype(np.int64)


# --- mock encryption ---------------------------------------------------------

_ids = itertools.count(1)


class MockValue:
    """Opaque handle; the plaintext is only reachable through its backend."""

    __slots__ = ("_owner", "_data", "shape", "uid")

    def __init__(self, owner, data):
        self._owner = owner
        self._data = data
        self._data.setflags(write=False)
        self.shape = data.shape
        self.uid = next(_ids)

    def __repr__(self):
        return f"<MockValue #{self.uid} shape={self.shape}>"

    def __array__(self, *args, **kwargs):
        raise TypeError("mock-encrypted values cannot be read directly; decrypt them")

    def __reduce__(self):
        raise TypeError("mock-encrypted values cannot be pickled")


def _keystream(key, nonce, n):
    out = bytearray()
    for block in itertools.count():
        if len(out) >= n:
            break
        out += hashlib.sha256(key + nonce + block.to_bytes(8, "big")).digest()
    return bytes(out[:n])


class MockBackend(Backend):
    """Stand-in for a homomorphic backend.

    Values are opaque handles, blobs on the wire are XOR-encrypted and
    authenticated, every operation is counted and every result is checked
    against the bit-width budget. It is not secure: the evaluation key is
    enough to open blobs. Its purpose is contract enforcement and cost
    accounting.
    """

    tag = "mock"

    def __init__(self, key=None, bit_width=3, can_decrypt=True):
        super().__init__(bit_width=bit_width)
        if key is None:
            key = os.urandom(32)
        self._key = bytes(key)
        self._can_decrypt = can_decrypt

    @classmethod
    def client(cls, seed=None, bit_width=3):
        rng = random.Random(seed) if seed is not None else random.SystemRandom()
        secret = bytes(rng.getrandbits(8) for _ in range(32))
        return cls(hashlib.sha256(b"mock-eval" + secret).digest(), bit_width=bit_width)

    @classmethod
    def server(cls, evaluation_key, bit_width=3):
        return cls(evaluation_key, bit_width=bit_width, can_decrypt=False)

    def evaluation_key(self):
        return self._key

    def is_value(self, x):
        return isinstance(x, MockValue)

    def _open(self, x):
        if not isinstance(x, MockValue):
            raise TypeError(f"expected a mock-encrypted value, got {type(x).__name__}")
        return x._data

    def _seal(self, arr):
        return MockValue(self, np.array(arr, dtype=np.int64))

    def decrypt(self, value):
        if not self._can_decrypt:
            raise PermissionError("server-side backend holds no decryption key")
        return super().decrypt(value)

    def to_wire(self, value):
        arr = self._open(value)
        payload = json.dumps({"shape": list(arr.shape), "data": arr.ravel().tolist()}).encode()
        nonce = os.urandom(16)
        body = bytes(a ^ b for a, b in zip(payload, _keystream(self._key, nonce, len(payload))))
        mac = hmac.new(self._key, nonce + body, hashlib.sha256).digest()[:16]
        return {"blob": base64.b64encode(nonce + body + mac).decode("ascii"), "backend": self.tag}

    def from_wire(self, obj):
        if not isinstance(obj, dict) or obj.get("backend") != self.tag or "blob" not in obj:
            raise BadCiphertext("expected a mock ciphertext blob")
        try:
            raw = base64.b64decode(obj["blob"], validate=True)
        except (ValueError, TypeError):
            raise BadCiphertext("blob is not valid base64") from None
        if len(raw) < 32:
            raise BadCiphertext("blob too short")
        nonce, body, mac = raw[:16], raw[16:-16], raw[-16:]
        expect = hmac.new(self._key, nonce + body, hashlib.sha256).digest()[:16]
        if not hmac.compare_digest(mac, expect):
            raise BadCiphertext("blob authentication failed (wrong key or tampering)")
        payload = bytes(a ^ b for a, b in zip(body, _keystream(self._key, nonce, len(body))))
        d = json.loads(payload)
        arr = np.asarray(d["data"], dtype=np.int64).reshape(d["shape"])
        return self._seal(arr)


# --- registry ------------------------------------------------------------

_REGISTRY = {"clear": ClearBackend, "mock": MockBackend}
_ENTRY_POINT_GROUP = "secure_replay.backends"


def register_backend(name, factory):
    """Register a backend class (e.g. a homomorphic plug-in) under ``name``.

    The class must implement the Backend contract plus ``client(seed)``,
    ``server(evaluation_key)``, ``to_wire`` and ``from_wire``.
    """
    _REGISTRY[name] = factory


def get_backend(name):
    if name not in _REGISTRY:
        from importlib.metadata import entry_points

        for ep in entry_points(group=_ENTRY_POINT_GROUP):
            if ep.name == name:
                _REGISTRY[name] = ep.load()
                break
    try:
        return _REGISTRY[name]
    except KeyError:
        hint = " (install a homomorphic backend plug-in)" if name == "encrypted" else ""
        raise BackendUnavailable(f"backend {name!r} is not available{hint}") from None


def available_backends():
    return sorted(_REGISTRY)
