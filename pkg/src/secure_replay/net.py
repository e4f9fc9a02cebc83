"""Accepting labeled Petri nets: structure, firing rule and PNML input."""

from collections import deque
from collections.abc import Mapping
import operator
import xml.etree.ElementTree as ET

from .errors import (
    BoundExceeded,
    DuplicateVisibleLabel,
    FiringDisabled,
    MissingMarking,
    NetError,
    PnmlError,
    UnknownTransition,
)

SILENT = None
_SILENT_NAMES = {"", "τ", "tau"}


def is_silent_label(label):
    return label is None or label.strip().lower() in _SILENT_NAMES


class Marking(Mapping):
    """Immutable multiset of tokens over places; absent places hold zero."""

    __slots__ = ("_tokens", "_hash")

    def __init__(self, tokens=()):
        items = {p: operator.index(c) for p, c in dict(tokens).items()}
        for place, count in items.items():
            if count < 0:
                raise ValueError(f"negative token count for {place!r}")
        self._tokens = {p: c for p, c in sorted(items.items()) if c}
        self._hash = None

    @classmethod
    def of(cls, *places):
        """Marking with one token per listed place (repeats accumulate)."""
        tokens = {}
        for p in places:
            tokens[p] = tokens.get(p, 0) + 1
        return cls(tokens)

    def __getitem__(self, place):
        return self._tokens.get(place, 0)

    def __iter__(self):
        return iter(self._tokens)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, place):
        return place in self._tokens

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(tuple(self._tokens.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Marking):
            return self._tokens == other._tokens
        if isinstance(other, Mapping):
            return self._tokens == {p: c for p, c in other.items() if c}
        return NotImplemented

    def __lt__(self, other):
        return tuple(self._tokens.items()) < tuple(other._tokens.items())

    def __repr__(self):
        inner = ", ".join(f"{p}:{c}" for p, c in self._tokens.items())
        return "{" + inner + "}"

    def total(self):
        return sum(self._tokens.values())

    def support(self):
        return frozenset(self._tokens)

    def add(self, other):
        tokens = dict(self._tokens)
        for p, c in other.items():
            tokens[p] = tokens.get(p, 0) + c
        return Marking(tokens)


class AcceptingNet:
    """Labeled Petri net with an initial and a final marking.

    Places are kept in lexicographic order; transitions are ordered with the
    visible ones first (sorted by label) followed by the silent ones (sorted
    by id). Instances are immutable once built.
    """

    def __init__(self, places, labels, arcs, initial_marking, final_marking):
        places = list(places)
        if len(set(places)) != len(places):
            raise NetError("duplicate place ids")
        labels = {t: (SILENT if is_silent_label(lbl) else lbl) for t, lbl in dict(labels).items()}
        place_set = set(places)
        overlap = place_set & set(labels)
        if overlap:
            raise NetError(f"ids used for both places and transitions: {sorted(overlap)}")

        seen = {}
        for t, lbl in labels.items():
            if lbl is SILENT:
                continue
            if lbl in seen:
                raise DuplicateVisibleLabel(
                    f"label {lbl!r} used by transitions {seen[lbl]!r} and {t!r}")
            seen[lbl] = t

        arcs = frozenset((src, dst) for src, dst in arcs)
        for src, dst in arcs:
            if not ((src in place_set and dst in labels) or (src in labels and dst in place_set)):
                raise NetError(f"arc {src!r}->{dst!r} must connect a place and a transition")

        initial = initial_marking if isinstance(initial_marking, Marking) else Marking(initial_marking)
        final = final_marking if isinstance(final_marking, Marking) else Marking(final_marking)
        for name, mk in (("initial", initial), ("final", final)):
            stray = set(mk) - place_set
            if stray:
                raise NetError(f"{name} marking refers to undeclared places {sorted(stray)}")

        visible = sorted((t for t, lbl in labels.items() if lbl is not SILENT), key=lambda t: labels[t])
        silent = sorted(t for t, lbl in labels.items() if lbl is SILENT)

        self._places = tuple(sorted(places))
        self._transitions = tuple(visible + silent)
        self._visible = tuple(visible)
        self._silent = tuple(silent)
        self._labels = labels
        self._arcs = arcs
        self._initial = initial
        self._final = final
        self._by_label = {lbl: t for lbl, t in seen.items()}

        pre = {n: set() for n in (*self._places, *self._transitions)}
        post = {n: set() for n in (*self._places, *self._transitions)}
        for src, dst in arcs:
            post[src].add(dst)
            pre[dst].add(src)
        self._pre = {n: frozenset(s) for n, s in pre.items()}
        self._post = {n: frozenset(s) for n, s in post.items()}

    @property
    def places(self):
        return self._places

    @property
    def transitions(self):
        return self._transitions

    @property
    def visible_transitions(self):
        return self._visible

    @property
    def silent_transitions(self):
        return self._silent

    @property
    def activities(self):
        """Visible activity names in transition order."""
        return tuple(self._labels[t] for t in self._visible)

    @property
    def arcs(self):
        return self._arcs

    @property
    def initial_marking(self):
        return self._initial

    @property
    def final_marking(self):
        return self._final

    def label(self, t):
        self._check_transition(t)
        return self._labels[t]

    def is_silent(self, t):
        return self.label(t) is SILENT

    def transition_for(self, activity):
        try:
            return self._by_label[activity]
        except KeyError:
            raise UnknownTransition(f"no transition labeled {activity!r}") from None

    def preset(self, node):
        try:
            return self._pre[node]
        except KeyError:
            raise UnknownTransition(f"unknown node {node!r}") from None

    def postset(self, node):
        try:
            return self._post[node]
        except KeyError:
            raise UnknownTransition(f"unknown node {node!r}") from None

    def _check_transition(self, t):
        if t not in self._labels:
            raise UnknownTransition(f"unknown transition {t!r}")

    def __eq__(self, other):
        if not isinstance(other, AcceptingNet):
            return NotImplemented
        return (self._places == other._places and self._labels == other._labels
                and self._arcs == other._arcs and self._initial == other._initial
                and self._final == other._final)

    def __hash__(self):
        return hash((self._places, self._transitions, self._arcs))

    def __repr__(self):
        return (f"AcceptingNet(places={len(self._places)}, visible={len(self._visible)}, "
                f"silent={len(self._silent)}, initial={self._initial!r}, final={self._final!r})")


def enabled(net, m, t):
    net._check_transition(t)
    return all(m[p] >= 1 for p in net.preset(t))


def fire(net, m, t):
    if not enabled(net, m, t):
        raise FiringDisabled(f"transition {t!r} is not enabled in {m!r}")
    pre, post = net.preset(t), net.postset(t)
    tokens = dict(m.items())
    for p in pre - post:
        tokens[p] -= 1
    for p in post - pre:
        tokens[p] = tokens.get(p, 0) + 1
    return Marking(tokens)


def _explore(net, bound):
    start = net.initial_marking
    if any(c > bound for c in start.values()):
        raise BoundExceeded(f"initial marking exceeds bound {bound}")
    seen = {start}
    edges = []
    queue = deque([start])
    while queue:
        m = queue.popleft()
        for t in net.transitions:
            if not enabled(net, m, t):
                continue
            m2 = fire(net, m, t)
            if any(c > bound for c in m2.values()):
                raise BoundExceeded(
                    f"firing {t!r} in {m!r} yields {m2!r}, above the bound of {bound}")
            edges.append((m, t, m2))
            if m2 not in seen:
                seen.add(m2)
                queue.append(m2)
    return seen, edges


def reachable_markings(net, bound=1):
    """All markings reachable from the initial marking.

    Raises BoundExceeded as soon as a marking holds more than `bound` tokens
    in some place.
    """
    if bound < 1:
        raise ValueError("bound must be >= 1")
    seen, _ = _explore(net, bound)
    return frozenset(seen)


def is_safe(net):
    try:
        reachable_markings(net, 1)
    except BoundExceeded:
        return False
    return True


# --- PNML -----------------------------------------------------------------

def _local(tag):
    return tag.rsplit("}", 1)[-1]


def _child(elem, name):
    for c in elem:
        if _local(c.tag) == name:
            return c
    return None


def _text_of(elem):
    if elem is None:
        return None
    txt = _child(elem, "text")
    if txt is not None and txt.text is not None:
        return txt.text.strip()
    return elem.text.strip() if elem.text and elem.text.strip() else None


def _count(elem, where):
    raw = _text_of(elem)
    if raw is None:
        return 0
    try:
        value = int(raw)
    except ValueError:
        raise PnmlError(f"{where}: token count {raw!r} is not an integer") from None
    if value < 0:
        raise PnmlError(f"{where}: negative token count")
    return value


def _walk(elem):
    """Pre-order walk that does not descend into final-marking sections."""
    for c in elem:
        yield c
        if _local(c.tag) != "finalmarkings":
            yield from _walk(c)


def parse_pnml(text):
    """Build an AcceptingNet from a PNML document.

    Only places, transitions, arcs, initial markings and a ``finalmarkings``
    section are read. Without a final marking, the unique sink place with one
    token is used.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise PnmlError(f"malformed XML at line {line}, column {col}: {exc}") from None

    nets = [e for e in root.iter() if _local(e.tag) == "net"]
    if not nets:
        raise PnmlError("no <net> element found")
    if len(nets) > 1:
        raise PnmlError(f"expected one <net>, found {len(nets)}")
    net_el = nets[0]

    places, initial, labels, arcs = [], {}, {}, []
    final = None
    for el in _walk(net_el):
        kind = _local(el.tag)
        if kind == "place":
            pid = el.get("id")
            if pid is None:
                raise PnmlError("place without id")
            places.append(pid)
            n = _count(_child(el, "initialMarking"), f"place {pid!r}")
            if n:
                initial[pid] = n
        elif kind == "transition":
            tid = el.get("id")
            if tid is None:
                raise PnmlError("transition without id")
            label = _text_of(_child(el, "name"))
            for tool in el:
                if _local(tool.tag) == "toolspecific" and tool.get("activity") == "$invisible$":
                    label = None
            labels[tid] = label
        elif kind == "arc":
            src, dst = el.get("source"), el.get("target")
            if src is None or dst is None:
                raise PnmlError(f"arc {el.get('id')!r} lacks source or target")
            weight = _count(_child(el, "inscription"), f"arc {el.get('id')!r}")
            if weight > 1:
                raise PnmlError(f"arc {el.get('id')!r} has weight {weight}; weighted arcs are unsupported")
            arcs.append((src, dst))
        elif kind == "finalmarkings":
            markings = [m for m in el if _local(m.tag) == "marking"]
            if markings:
                final = {}
                for pl in markings[0]:
                    if _local(pl.tag) != "place":
                        continue
                    ref = pl.get("idref")
                    n = _count(pl, f"final marking place {ref!r}")
                    if n:
                        final[ref] = n

    if not initial:
        raise MissingMarking("no initial marking: no place carries an initialMarking")
    if final is None:
        sources = {s for s, _ in arcs}
        sinks = [p for p in places if p not in sources]
        if len(sinks) != 1:
            raise MissingMarking(
                f"no final marking given and {len(sinks)} sink places found; expected exactly one")
        final = {sinks[0]: 1}
    if not final:
        raise MissingMarking("final marking is empty")

    return AcceptingNet(places, labels, arcs, initial, final)


def to_pnml(net):
    """Serialize an AcceptingNet as PNML accepted by parse_pnml."""
    ns = "http://www.pnml.org/version-2009/grammar/pnml"
    root = ET.Element("pnml", xmlns=ns)
    net_el = ET.SubElement(root, "net", id="net", type="http://www.pnml.org/version-2009/grammar/ptnet")
    page = ET.SubElement(net_el, "page", id="page")
    for p in net.places:
        pl = ET.SubElement(page, "place", id=p)
        ET.SubElement(ET.SubElement(pl, "name"), "text").text = p
        if net.initial_marking[p]:
            ET.SubElement(ET.SubElement(pl, "initialMarking"), "text").text = str(net.initial_marking[p])
    for t in net.transitions:
        tr = ET.SubElement(page, "transition", id=t)
        if not net.is_silent(t):
            ET.SubElement(ET.SubElement(tr, "name"), "text").text = net.label(t)
    for i, (src, dst) in enumerate(sorted(net.arcs)):
        ET.SubElement(page, "arc", id=f"arc{i}", source=src, target=dst)
    fm = ET.SubElement(ET.SubElement(net_el, "finalmarkings"), "marking")
    for p, c in net.final_marking.items():
        ET.SubElement(ET.SubElement(fm, "place", idref=p), "text").text = str(c)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True)
