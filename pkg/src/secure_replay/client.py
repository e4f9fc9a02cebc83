"""Trace-owner side of the replay: event encoding, counters and fitness.

A *session* is anything with ``activities`` plus ``start()``,
``step(marking, event)`` and ``final(marking)`` working on plaintext numpy
vectors; encryption, if any, happens inside it. :class:`LocalSession` runs the engine in-process, the
protocol module provides a remote one.
"""

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
from fractions import Fraction
import io
import json
import threading

import numpy as np

from .backend import get_backend
from .engine import ReplayEngine, value_bit_width
from .errors import ConformanceError, EmptyLog, EmptyTrace, UnknownActivity


def encode_event(name, visible_index):
    """One-hot vector of ``name`` over the visible activities."""
    try:
        pos = list(visible_index).index(name)
    except ValueError:
        raise UnknownActivity(name) from None
    vec = np.zeros(len(visible_index), dtype=np.int64)
    vec[pos] = 1
    return vec


@dataclass
class ReplayCounters:
    produced: int = 0
    consumed: int = 0
    missing: int = 0
    remaining: int = 0

    def __add__(self, other):
        return ReplayCounters(self.produced + other.produced, self.consumed + other.consumed,
                              self.missing + other.missing, self.remaining + other.remaining)

    def scaled(self, k):
        return ReplayCounters(self.produced * k, self.consumed * k, self.missing * k,
                              self.remaining * k)


def token_fitness(counters):
    """Fitness from token counters, clamped to [0, 1].

    Returns ``(value, defined)``; when consumed or produced is not positive
    the value is reported as 0 and ``defined`` is False.
    """
    c, p = counters.consumed, counters.produced
    if c <= 0 or p <= 0:
        return Fraction(0), False
    value = Fraction(1, 2) * (1 - Fraction(counters.missing, c)) \
        + Fraction(1, 2) * (1 - Fraction(counters.remaining, p))
    return min(max(value, Fraction(0)), Fraction(1)), True


@dataclass
class FitnessReport:
    trace: tuple
    counters: ReplayCounters
    final_reached: bool
    fitness_exact: Fraction
    fitness_defined: bool = True
    steps: int = 0

    @property
    def fitness(self):
        return float(self.fitness_exact)

    @property
    def fits(self):
        return self.counters.missing == 0 and self.counters.remaining == 0 and self.final_reached


def replay_trace(trace, session):
    """Replay one trace through ``session`` and return its FitnessReport."""
    trace = tuple(trace)
    if not trace:
        raise EmptyTrace("cannot replay an empty trace")
    events = [encode_event(a, session.activities) for a in trace]

    counters = ReplayCounters()
    marking = np.asarray(session.start(), dtype=np.int64)
    for event in events:
        nxt, missing = session.step(marking, event)
        nxt = np.asarray(nxt, dtype=np.int64)
        missing = int(missing)
        # inserted tokens count as consumed, not produced
        counters.produced += int(np.maximum(nxt - marking, 0).sum()) - missing
        counters.consumed += int(np.maximum(marking - nxt, 0).sum()) + missing
        counters.missing += missing
        marking = nxt
    flag, remaining = session.final(marking)
    final_reached = int(flag) == 1
    counters.remaining = int(remaining) if final_reached else int(marking.sum())
    value, defined = token_fitness(counters)
    return FitnessReport(trace, counters, final_reached, value, defined, steps=len(events))


class LocalSession:
    """Runs the engine in-process with the given backend.

    With the mock backend every vector crosses an encrypt, serialize,
    deserialize and decrypt boundary, as it would over the network.
    """

    def __init__(self, compiled, backend="clear", seed=None):
        self.compiled = compiled
        self.activities = tuple(compiled.visible)
        backend_cls = get_backend(backend) if isinstance(backend, str) else backend
        bits = value_bit_width(compiled) if backend_cls.tag != "clear" else None
        self._client = backend_cls.client(seed=seed, bit_width=bits)
        if backend_cls.tag == "clear":
            self._server = self._client
        else:
            self._server = backend_cls.server(self._client.evaluation_key(), bit_width=bits)
        self.engine = ReplayEngine(compiled, self._server)
        self.calls = Counter()

    @property
    def account(self):
        return self._server.account

    def _send(self, arr):
        return self._server.from_wire(self._client.to_wire(self._client.encrypt(arr)))

    def _recv(self, value):
        return self._client.decrypt(self._client.from_wire(self._server.to_wire(value)))

    def start(self):
        self.calls["start"] += 1
        return self._recv(self._server.encrypt(self.compiled.initial))

    def step(self, marking, event):
        self.calls["step"] += 1
        res = self.engine.step(self._send(marking), self._send(event))
        return self._recv(res.next_marking), int(self._recv(res.missing))

    def final(self, marking):
        self.calls["final"] += 1
        flag, remaining = self.engine.check_final_marking(self._send(marking))
        return int(self._recv(flag)), int(self._recv(remaining))


# --- logs ---------------------------------------------------------------------

@dataclass
class VariantResult:
    variant: tuple
    multiplicity: int
    report: FitnessReport = None
    error: str = None


@dataclass
class LogFitness:
    variants: list
    totals: ReplayCounters
    fitness_exact: Fraction
    fitness_defined: bool
    calls: Counter = field(default_factory=Counter)

    @property
    def fitness(self):
        return float(self.fitness_exact)

    def to_rows(self):
        rows = []
        for v in self.variants:
            r = v.report
            rows.append({
                "variant": list(v.variant), "multiplicity": v.multiplicity,
                "produced": r.counters.produced if r else None,
                "consumed": r.counters.consumed if r else None,
                "missing": r.counters.missing if r else None,
                "remaining": r.counters.remaining if r else None,
                "final_reached": r.final_reached if r else None,
                "fitness": r.fitness if r else None,
                "fitness_defined": r.fitness_defined if r else None,
                "error": v.error})
        return rows

    def aggregate_row(self):
        t = self.totals
        return {"variant": None, "multiplicity": sum(v.multiplicity for v in self.variants),
                "produced": t.produced, "consumed": t.consumed, "missing": t.missing,
                "remaining": t.remaining,
                "final_reached": None, "fitness": self.fitness,
                "fitness_defined": self.fitness_defined, "error": None}

    def to_json(self):
        doc = {"variants": self.to_rows(), "aggregate": self.aggregate_row()}
        return json.dumps(doc, indent=2) + "\n"

    def to_csv(self):
        cols = ["variant", "multiplicity", "produced", "consumed", "missing", "remaining",
                "final_reached", "fitness", "fitness_defined", "error"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.to_rows() + [self.aggregate_row()]:
            row = dict(row)
            row["variant"] = "<aggregate>" if row["variant"] is None else ";".join(row["variant"])
            w.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()

    def render(self, fmt="json"):
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        raise ValueError(f"unknown report format {fmt!r}")


def _variants(log):
    if hasattr(log, "variants"):
        items = list(log.variants.items())
    elif isinstance(log, dict):
        items = list(log.items())
    else:
        counts = {}
        for tr in log:
            counts[tuple(tr)] = counts.get(tuple(tr), 0) + 1
        items = list(counts.items())
    return [(tuple(v), int(k)) for v, k in items]


def replay_log(log, sessions, workers=1):
    """Replay each distinct variant once and aggregate by multiplicity.

    ``sessions`` is either a session (reused for every variant) or a
    zero-argument factory. With ``workers > 1`` variants replay in parallel,
    each worker thread holding its own session from the factory.
    """
    items = _variants(log)
    if not items:
        raise EmptyLog("event log has no traces")
    factory = sessions if not hasattr(sessions, "start") else (lambda: sessions)

    def run(session, variant, k):
        try:
            return VariantResult(variant, k, replay_trace(variant, session))
        except ConformanceError as exc:
            return VariantResult(variant, k, error=f"{type(exc).__name__}: {exc}")

    used = []
    if workers <= 1:
        session = factory()
        used.append(session)
        results = [run(session, v, k) for v, k in items]
    else:
        local = threading.local()
        lock = threading.Lock()

        def task(item):
            if not hasattr(local, "session"):
                local.session = factory()
                with lock:
                    used.append(local.session)
            return run(local.session, *item)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, items))

    totals = ReplayCounters()
    for r in results:
        if r.report is not None:
            totals = totals + r.report.counters.scaled(r.multiplicity)
    value, defined = token_fitness(totals)
    calls = Counter()
    for s in used:
        calls.update(getattr(s, "calls", {}))
    return LogFitness(results, totals, value, defined, calls)
