"""Event log ingestion (CSV and a minimal XES subset) into trace variants."""

import csv
from datetime import datetime
import io
from pathlib import Path
from types import MappingProxyType
import warnings
import xml.etree.ElementTree as ET

from .errors import EmptyLog, LogParseError, MissingColumn


class EventLog:
    """Multiset of traces as an ordered ``variant -> multiplicity`` map.

    Variants keep the order of their first appearance in the input.
    """

    def __init__(self, variants=()):
        items = variants.items() if hasattr(variants, "items") else variants
        data = {}
        for trace, k in items:
            trace, k = tuple(trace), int(k)
            if not trace:
                raise ValueError("variants must be non-empty")
            if k < 1:
                raise ValueError(f"multiplicity must be positive, got {k}")
            data[trace] = data.get(trace, 0) + k
        self._variants = MappingProxyType(data)

    @classmethod
    def from_traces(cls, traces):
        counts = {}
        for tr in traces:
            tr = tuple(tr)
            if tr:
                counts[tr] = counts.get(tr, 0) + 1
        return cls(counts)

    @property
    def variants(self):
        return self._variants

    @property
    def n_cases(self):
        return sum(self._variants.values())

    def traces(self):
        """Every case, expanded by multiplicity."""
        for v, k in self._variants.items():
            for _ in range(k):
                yield v

    def __len__(self):
        return len(self._variants)

    def __iter__(self):
        return iter(self._variants)

    def __eq__(self, other):
        return isinstance(other, EventLog) and list(self._variants.items()) == list(other._variants.items())

    def __repr__(self):
        return f"EventLog({len(self)} variants, {self.n_cases} cases)"


def _parse_time(value):
    value = value.strip()
    if not value:
        return None
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(value)
    except ValueError:
        raise LogParseError(f"unparseable timestamp {value!r}") from None


def _sort_key(item):
    # stable order: events without a timestamp keep file order at the end
    pos, ts = item
    if ts is None:
        return (1, 0.0, pos)
    return (0, ts.timestamp(), pos)


def _collapse(cases):
    traces = []
    for events in cases.values():
        events.sort(key=lambda e: _sort_key(e[:2]))
        trace = tuple(e[2] for e in events)
        if trace:
            traces.append(trace)
    if not traces:
        raise EmptyLog("log contains no events")
    return EventLog.from_traces(traces)


def parse_csv(text, case_col="case_id", activity_col="activity", timestamp_col="timestamp"):
    """Parse a CSV event log; rows are grouped per case and ordered by timestamp."""
    if not text.strip():
        raise EmptyLog("empty CSV input")
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    for col in (case_col, activity_col):
        if col not in header:
            raise MissingColumn(f"CSV header lacks required column {col!r} (found {header})")
    has_ts = timestamp_col in header if timestamp_col else False

    cases = {}
    for pos, row in enumerate(reader):
        case, activity = row[case_col], row[activity_col]
        if case is None or activity is None:
            raise LogParseError(f"row {pos + 2}: too few fields")
        ts = _parse_time(row[timestamp_col] or "") if has_ts else None
        cases.setdefault(case, []).append((pos, ts, activity))
    return _collapse(cases)


def _local(tag):
    return tag.rsplit("}", 1)[-1]


def parse_xes(text):
    """Parse the log/trace/event subset of XES; activity from ``concept:name``."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise LogParseError(f"malformed XES at line {line}, column {col}: {exc}") from None
    if _local(root.tag) != "log":
        raise LogParseError(f"expected a <log> root, got <{_local(root.tag)}>")

    cases = {}
    skipped = 0
    for i, trace in enumerate(el for el in root if _local(el.tag) == "trace"):
        events = []
        for pos, ev in enumerate(el for el in trace if _local(el.tag) == "event"):
            name = ts = None
            for attr in ev:
                key = attr.get("key")
                if key == "concept:name":
                    name = attr.get("value")
                elif key == "time:timestamp":
                    ts = _parse_time(attr.get("value") or "")
            if name is None:
                skipped += 1
                continue
            events.append((pos, ts, name))
        cases[i] = events
    if skipped:
        warnings.warn(f"skipped {skipped} event(s) without concept:name", stacklevel=2)
    return _collapse(cases)


def read_log(path, **kwargs):
    """Read a ``.csv`` or ``.xes`` file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return parse_csv(text, **kwargs)
    if suffix == ".xes":
        return parse_xes(text)
    raise LogParseError(f"unsupported log format {suffix!r} (expected .csv or .xes)")
