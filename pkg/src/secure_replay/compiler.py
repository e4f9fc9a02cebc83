"""Compile an accepting net into the integer matrices used for replay.

The artifact holds:

* ``incidence``   places x transitions (visible first, then silent)
* ``enablement``  one row per scenario over [places | visible]
* ``sequences``   one Parikh row per scenario over transitions
* ``presets``     presets of the visible transitions, visible x places
* ``divisors``    row sums of ``enablement``
* ``final`` and ``initial`` markings as place vectors
"""

from dataclasses import dataclass
import json
import warnings

import numpy as np

from .errors import ArtifactError, BoundExceeded, DimensionMismatch, SchemaVersionMismatch
from .net import reachable_markings

ARTIFACT_VERSION = 1
DEFAULT_MARKING_BOUND = 7


@dataclass(frozen=True)
class Scenario:
    """Firing ``tau_prefix`` then ``target`` from exactly ``required_marking``."""

    required_marking: frozenset
    tau_prefix: tuple
    target: str

    @property
    def sequence(self):
        return self.tau_prefix + (self.target,)


def incidence_matrix(net):
    places = {p: i for i, p in enumerate(net.places)}
    trans = {t: j for j, t in enumerate(net.transitions)}
    out = np.zeros((len(places), len(trans)), dtype=np.int64)
    arcs = net.arcs
    for src, dst in arcs:
        if src in places:
            if (dst, src) not in arcs:
                out[places[src], trans[dst]] = -1
        elif (dst, src) not in arcs:
            out[places[dst], trans[src]] = 1
    return out


def _chains(net, t):
    """Backward weakest-precondition chains over silent transitions ending in t."""
    limit = len(net.silent_transitions)
    start = frozenset(net.preset(t))
    found = [(start, ())]
    stack = [(start, (), (start,))]
    while stack:
        req, prefix, history = stack.pop()
        if len(prefix) >= limit:
            continue
        for tau in net.silent_transitions:
            post, pre = net.postset(tau), net.preset(tau)
            if not post & req:
                continue
            carried = req - post
            if pre & carried:
                # would need two tokens in one place
                continue
            new_req = frozenset(carried | pre)
            if new_req in history:
                continue
            new_prefix = (tau,) + prefix
            found.append((new_req, new_prefix))
            stack.append((new_req, new_prefix, history + (new_req,)))
    return found


def enumerate_scenarios(net):
    """Every (required marking, silent prefix, visible target) scenario.

    Rows are grouped by visible transition. Inside a group they are ordered
    by the sorted indices of the required places, then by prefix length and
    silent-transition indices.
    """
    p_idx = {p: i for i, p in enumerate(net.places)}
    t_idx = {t: j for j, t in enumerate(net.transitions)}
    out = []
    for t in net.visible_transitions:
        seen = set()
        group = []
        for req, prefix in _chains(net, t):
            parikh = tuple(sorted(t_idx[x] for x in prefix))
            key = (req, parikh)
            if key in seen:
                continue
            seen.add(key)
            group.append(Scenario(req, prefix, t))
        group.sort(key=lambda s: (tuple(sorted(p_idx[p] for p in s.required_marking)),
                                  len(s.tau_prefix),
                                  tuple(sorted(t_idx[x] for x in s.tau_prefix)),
                                  tuple(t_idx[x] for x in s.tau_prefix)))
        out.extend(group)
    return out


def observable_places(net, scenarios):
    """Places that can hold a token between two visible steps.

    Least fixpoint from the initial marking: a place becomes observable when
    a missing-token step or an applicable scenario leaves a token in it.
    """
    obs = set(net.initial_marking)
    for t in net.visible_transitions:
        obs |= net.postset(t)
    effects = []
    for s in scenarios:
        delta = {}
        for x in s.sequence:
            for p in net.preset(x):
                delta[p] = delta.get(p, 0) - 1
            for p in net.postset(x):
                delta[p] = delta.get(p, 0) + 1
        effects.append((s.required_marking, {p for p, d in delta.items() if d > 0}))
    changed = True
    while changed:
        changed = False
        for req, gained in effects:
            if req <= obs and not gained <= obs:
                obs |= gained
                changed = True
    return frozenset(obs)


def prune_unobservable(net, scenarios):
    obs = observable_places(net, scenarios)
    return [s for s in scenarios if s.required_marking <= obs]


def _int_matrix(rows, shape, name):
    arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


ARRAYS = ("incidence", "enablement", "sequences", "presets", "divisors", "final", "initial")
_ROW_ARRAYS = ("incidence", "enablement", "sequences", "presets")


class CompiledNet:
    """Matrices and index maps for one accepting net; immutable."""

    def __init__(self, places, visible, transitions, incidence, enablement, sequences, presets,
                 divisors, final, initial, marking_bound=DEFAULT_MARKING_BOUND, scenarios=None):
        self.places = tuple(places)
        self.visible = tuple(visible)
        self.transitions = tuple(transitions)
        n_p, n_v, n_t = len(self.places), len(self.visible), len(self.transitions)
        if n_v > n_t:
            raise DimensionMismatch("more visible activities than transitions")
        enablement = np.asarray(enablement, dtype=np.int64)
        if enablement.ndim != 2:
            if enablement.size:
                raise DimensionMismatch("enablement must be a matrix")
            enablement = enablement.reshape(0, n_p + n_v)
        rows = enablement.shape[0]
        self.incidence = _int_matrix(incidence, (n_p, n_t), "incidence")
        self.enablement = _int_matrix(enablement, (rows, n_p + n_v), "enablement")
        self.sequences = _int_matrix(sequences, (rows, n_t), "sequences")
        self.presets = _int_matrix(presets, (n_v, n_p), "presets")
        self.divisors = _int_matrix(divisors, (rows,), "divisors")
        self.final = _int_matrix(final, (n_p,), "final")
        self.initial = _int_matrix(initial, (n_p,), "initial")
        self.marking_bound = int(marking_bound)
        self.scenarios = tuple(scenarios) if scenarios is not None else None

        if not np.isin(self.incidence, (-1, 0, 1)).all():
            raise ArtifactError("incidence entries must be in {-1, 0, 1}")
        for name in ("enablement", "presets"):
            if not np.isin(getattr(self, name), (0, 1)).all():
                raise ArtifactError(f"{name} entries must be 0 or 1")
        for name in ("sequences", "divisors", "final", "initial"):
            if (getattr(self, name) < 0).any():
                raise ArtifactError(f"{name} entries must be non-negative")
        if self.marking_bound < 1:
            raise ArtifactError("marking_bound must be positive")
        if self.final.sum() < 1:
            raise ArtifactError("final marking is empty")
        for name in ARRAYS:
            getattr(self, name).setflags(write=False)

    @property
    def n_scenarios(self):
        return self.enablement.shape[0]

    @property
    def n_places(self):
        return len(self.places)

    @property
    def n_visible(self):
        return len(self.visible)

    @property
    def silent(self):
        return self.transitions[self.n_visible:]

    def scenario_targets(self):
        """Visible index targeted by each scenario row (-1 if the row has none)."""
        block = self.enablement[:, self.n_places:]
        return np.where(block.any(axis=1), block.argmax(axis=1), -1)

    def priority_order(self):
        """Row indices ordered by preference when several rows match.

        Shorter firing sequences come first; ties go to the sequence whose
        sorted silent-transition indices are lexicographically smallest, then
        to the lower row.
        """
        n_v = self.n_visible

        def key(i):
            row = self.sequences[i]
            silent = tuple(j for j in range(n_v, len(row)) for _ in range(int(row[j])))
            return (int(row.sum()), silent, i)

        return sorted(range(self.n_scenarios), key=key)

    def check_invariants(self):
        """Return a list of violated structural invariants (empty if none)."""
        problems = []
        if not np.array_equal(self.divisors, self.enablement.sum(axis=1)):
            problems.append("divisors differ from the enablement row sums")
        vis_block = self.enablement[:, self.n_places:]
        if not (vis_block.sum(axis=1) == 1).all():
            problems.append("some enablement row lacks exactly one visible target")
        else:
            targets = vis_block.argmax(axis=1)
            seq_vis = self.sequences[:, :self.n_visible]
            if not np.array_equal(seq_vis, np.eye(self.n_visible, dtype=np.int64)[targets]):
                problems.append("visible block of the sequences does not match the targets")
        return problems

    def __eq__(self, other):
        if not isinstance(other, CompiledNet):
            return NotImplemented
        return (self.places == other.places and self.visible == other.visible
                and self.transitions == other.transitions
                and self.marking_bound == other.marking_bound
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ARRAYS))

    __hash__ = None

    def __repr__(self):
        return (f"CompiledNet(places={self.n_places}, visible={self.n_visible}, "
                f"transitions={len(self.transitions)}, scenarios={self.n_scenarios}, "
                f"marking_bound={self.marking_bound})")

    # --- JSON artifact ----------------------------------------------------

    def to_dict(self):
        d = {"version": ARTIFACT_VERSION, "places": list(self.places),
             "visible": list(self.visible), "transitions": list(self.transitions)}
        for name in ARRAYS:
            d[name] = getattr(self, name).tolist()
        d["marking_bound"] = self.marking_bound
        return d

    def to_json(self):
        # one matrix row per line keeps artifacts diffable
        d = self.to_dict()
        lines = ["{"]
        keys = list(d)
        for k, key in enumerate(keys):
            value = d[key]
            sep = "," if k < len(keys) - 1 else ""
            if key in _ROW_ARRAYS and value:
                rows = ",\n    ".join(json.dumps(r) for r in value)
                lines.append(f'  "{key}": [\n    {rows}\n  ]{sep}')
            else:
                lines.append(f'  "{key}": {json.dumps(value, ensure_ascii=False)}{sep}')
        lines.append("}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ArtifactError("artifact must be a JSON object")
        version = d.get("version")
        if version != ARTIFACT_VERSION:
            raise SchemaVersionMismatch(
                f"artifact version {version!r} is not supported (expected {ARTIFACT_VERSION})")
        required = ("places", "visible", "transitions") + ARRAYS + ("marking_bound",)
        missing = [k for k in required if k not in d]
        if missing:
            raise ArtifactError(f"artifact lacks fields {missing}")
        try:
            return cls(d["places"], d["visible"], d["transitions"],
                       *(d[k] for k in ARRAYS), d["marking_bound"])
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ArtifactError):
                raise
            raise DimensionMismatch(str(exc)) from None

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"artifact is not valid JSON: {exc}") from None
        return cls.from_dict(d)


def serialize(compiled):
    return compiled.to_json()


def deserialize(text):
    return CompiledNet.from_json(text)


def compile_net(net, marking_bound=DEFAULT_MARKING_BOUND, prune=True):
    """Build the CompiledNet of an accepting net.

    With ``prune`` (the default) scenarios whose required places can never
    hold a token between visible steps are left out; they cannot match any
    marking the replay loop produces.
    """
    peak = max([*net.initial_marking.values(), *net.final_marking.values(), 0])
    if marking_bound < max(peak, 1):
        raise ArtifactError(f"marking_bound {marking_bound} is below the largest token count {peak}")
    try:
        reachable_markings(net, 1)
    except BoundExceeded:
        warnings.warn("net is not safe; scenario requirements assume at most one token per place",
                      stacklevel=2)

    scenarios = enumerate_scenarios(net)
    if prune:
        scenarios = prune_unobservable(net, scenarios)

    p_idx = {p: i for i, p in enumerate(net.places)}
    t_idx = {t: j for j, t in enumerate(net.transitions)}
    n_p, n_v, n_t = len(net.places), len(net.visible_transitions), len(net.transitions)

    enablement = np.zeros((len(scenarios), n_p + n_v), dtype=np.int64)
    sequences = np.zeros((len(scenarios), n_t), dtype=np.int64)
    for i, s in enumerate(scenarios):
        for p in s.required_marking:
            enablement[i, p_idx[p]] = 1
        enablement[i, n_p + t_idx[s.target]] = 1
        for x in s.sequence:
            sequences[i, t_idx[x]] += 1

    presets = np.zeros((n_v, n_p), dtype=np.int64)
    for j, t in enumerate(net.visible_transitions):
        for p in net.preset(t):
            presets[j, p_idx[p]] = 1

    final = np.array([net.final_marking[p] for p in net.places], dtype=np.int64)
    initial = np.array([net.initial_marking[p] for p in net.places], dtype=np.int64)
    return CompiledNet(net.places, net.activities, net.transitions, incidence_matrix(net),
                       enablement, sequences, presets, enablement.sum(axis=1), final, initial,
                       marking_bound, scenarios=scenarios)
