"""Classic token-game replay and brute-force engine validation.

Nothing here uses the compiled matrices for its own answers: replay walks
the net directly, so it can serve as ground truth for the matrix engine.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .backend import ClearBackend
from .compiler import enumerate_scenarios, observable_places
from .engine import ReplayEngine
from .errors import ArtifactError, EmptyTrace, UnknownActivity, UnknownTransition
from .net import Marking, enabled, fire, reachable_markings


def silent_enabling_sequence(net, m, t, max_depth=None):
    """Shortest run of silent transitions after which ``t`` is enabled.

    Breadth-first over silent firings, at most ``max_depth`` deep (default:
    the number of silent transitions). Among the shortest candidates the one
    with the smallest sorted tuple of silent-transition positions wins.
    Returns None when no such run exists.
    """
    if max_depth is None:
        max_depth = len(net.silent_transitions)
    if enabled(net, m, t):
        return ()
    pos = {tau: i for i, tau in enumerate(net.silent_transitions)}
    level = [(m, ())]
    for _ in range(max_depth):
        nxt = []
        for mk, seq in level:
            for tau in net.silent_transitions:
                if enabled(net, mk, tau):
                    nxt.append((fire(net, mk, tau), seq + (tau,)))
        hits = [seq for mk, seq in nxt if enabled(net, mk, t)]
        if hits:
            return min(hits, key=lambda s: (sorted(pos[x] for x in s), [pos[x] for x in s]))
        level = nxt
    return None


def replay_event(net, m, t):
    """Semantic effect of replaying visible transition ``t`` from ``m``.

    Returns (next marking, fired silent run, inserted missing tokens).
    """
    seq = silent_enabling_sequence(net, m, t)
    inserted = Marking()
    if seq is None:
        seq = ()
        inserted = Marking.of(*sorted(net.preset(t)))
        m = m.add(inserted)
    for x in seq + (t,):
        m = fire(net, m, x)
    return m, seq, inserted


@dataclass
class OracleResult:
    produced: int
    consumed: int
    missing: int
    remaining: int
    final_reached: bool
    final_marking: Marking
    firings: list = field(default_factory=list)


def classic_replay(net, trace):
    """Replay a trace by playing the token game on the net.

    Produced and consumed count every token moved by every fired transition,
    silent ones included. When no silent run enables an event, the whole
    preset of its transition is inserted and counted as missing. At the end,
    if every final-marking place is covered, remaining counts the tokens
    beyond the final marking; otherwise every token left counts.
    """
    trace = list(trace)
    if not trace:
        raise EmptyTrace("cannot replay an empty trace")
    m = net.initial_marking
    produced = consumed = missing = 0
    firings = []
    for activity in trace:
        try:
            t = net.transition_for(activity)
        except UnknownTransition:
            raise UnknownActivity(activity) from None
        m, seq, inserted = replay_event(net, m, t)
        missing += inserted.total()
        for x in seq + (t,):
            produced += len(net.postset(x))
            consumed += len(net.preset(x))
        firings.append({"event": activity, "fired": list(seq + (t,)),
                        "inserted": dict(inserted.items())})
    final = net.final_marking
    covered = all(m[p] >= c for p, c in final.items())
    if covered:
        remaining = sum(max(m[p] - final[p], 0) for p in m)
    else:
        remaining = m.total()
    return OracleResult(produced, consumed, missing, remaining, covered, m, firings)


# --- exhaustive engine validation ------------------------------------------

@dataclass
class ValidationReport:
    domain: str
    markings: int
    transitions: int
    cases: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def passed(self):
        return self.cases - len(self.mismatches)

    @property
    def ok(self):
        return not self.mismatches

    def to_dict(self):
        return {"domain": self.domain, "markings": self.markings, "transitions": self.transitions,
                "cases": self.cases, "passed": self.passed, "mismatches": self.mismatches}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _as_vector(places, m):
    return np.array([m[p] for p in places], dtype=np.int64)


def _as_marking(places, vec):
    return Marking({p: int(v) for p, v in zip(places, vec)})


def observable_markings(net, bound=1):
    """Reachable markings whose tokens all sit in places replay can leave marked.

    Replay fires silent transitions only right before the visible event that
    needs them, so only these markings ever reach the engine. An artifact
    compiled with pruning is exact on them.
    """
    obs = observable_places(net, enumerate_scenarios(net))
    return frozenset(m for m in reachable_markings(net, bound) if set(m) <= obs)


def validate_engine(net, compiled, bound=1, domain="reachable"):
    """Compare the engine against the token game on every marking x event.

    ``domain`` selects the markings: ``"reachable"`` for the whole
    reachability set, ``"observable"`` for the reachable markings replay
    can actually hand to the engine (see observable_markings).
    """
    if tuple(compiled.places) != tuple(net.places) or tuple(compiled.visible) != tuple(net.activities):
        raise ArtifactError("artifact indices do not match the net")
    if domain == "reachable":
        markings = reachable_markings(net, bound)
    elif domain == "observable":
        markings = observable_markings(net, bound)
    else:
        raise ValueError(f"unknown domain {domain!r}")

    engine = ReplayEngine(compiled, ClearBackend())
    eye = np.eye(compiled.n_visible, dtype=np.int64)
    report = ValidationReport(domain, len(markings), compiled.n_visible)
    for m in sorted(markings):
        vec = _as_vector(net.places, m)
        for j, t in enumerate(net.visible_transitions):
            expected, _, inserted = replay_event(net, m, t)
            got = engine.step(vec, eye[j])
            got_m = _as_marking(net.places, got.next_marking)
            report.cases += 1
            if got_m != expected or int(got.missing) != inserted.total():
                report.mismatches.append({
                    "marking": repr(m), "activity": net.label(t),
                    "expected": repr(expected), "expected_missing": inserted.total(),
                    "got": repr(got_m), "got_missing": int(got.missing)})
    return report
