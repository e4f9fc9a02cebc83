"""scikit-learn style facade over compile + replay.

``fit`` compiles the model net, ``transform`` maps traces to token counters,
``predict`` flags fitting traces and ``score`` returns the log fitness.
"""

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .backend import get_backend
from .client import LocalSession, replay_log, replay_trace
from .compiler import DEFAULT_MARKING_BOUND, CompiledNet, compile_net
from .errors import EmptyLog, EmptyTrace
from .log_io import EventLog
from .net import AcceptingNet, parse_pnml

COUNTER_COLUMNS = ("produced", "consumed", "missing", "remaining")


def check_net(X):
    """Coerce a net, compiled artifact, PNML text or PNML path into a net or artifact."""
    if isinstance(X, (AcceptingNet, CompiledNet)):
        return X
    if isinstance(X, Path) or (isinstance(X, str) and not X.lstrip().startswith("<")):
        X = Path(X).read_text(encoding="utf-8")
    if isinstance(X, str):
        return parse_pnml(X)
    raise TypeError(f"expected a net, an artifact or PNML, got {type(X).__name__}")


def check_traces(X):
    """Coerce an EventLog, mapping or iterable of traces into a list of tuples."""
    if isinstance(X, EventLog):
        traces = list(X.traces())
    elif isinstance(X, dict):
        traces = list(EventLog(X).traces())
    elif isinstance(X, str):
        raise TypeError("expected a collection of traces, got a single string")
    else:
        traces = [tuple(t) for t in X]
    if not traces:
        raise EmptyLog("no traces given")
    for t in traces:
        if not t:
            raise EmptyTrace("traces must be non-empty")
    return traces


class SecureTokenReplay(BaseEstimator):
    """Token-based replay conformance checker.

    Parameters
    ----------
    backend : str
        Arithmetic backend name (``"clear"``, ``"mock"`` or a registered plug-in).
    marking_bound : int
        Largest per-place token count the artifact is rated for.
    prune : bool
        Drop scenarios that cannot fire between visible steps.
    seed : int or None
        Key-generation seed for non-clear backends.
    """

    def __init__(self, backend="clear", marking_bound=DEFAULT_MARKING_BOUND, prune=True, seed=None):
        self.backend = backend
        self.marking_bound = marking_bound
        self.prune = prune
        self.seed = seed

    def fit(self, X, y=None):
        model = check_net(X)
        get_backend(self.backend)
        if isinstance(model, CompiledNet):
            self.compiled_ = model
        else:
            self.compiled_ = compile_net(model, marking_bound=self.marking_bound, prune=self.prune)
        self.activities_ = tuple(self.compiled_.visible)
        self.n_features_in_ = len(self.activities_)
        return self

    def _session(self):
        check_is_fitted(self, "compiled_")
        return LocalSession(self.compiled_, self.backend, seed=self.seed)

    def replay(self, X):
        """Per-trace FitnessReport objects, in input order."""
        session = self._session()
        cache = {}
        out = []
        for t in check_traces(X):
            if t not in cache:
                cache[t] = replay_trace(t, session)
            out.append(cache[t])
        return out

    def transform(self, X):
        """Counters as an (n_traces, 4) int array: produced, consumed, missing, remaining."""
        reports = self.replay(X)
        return np.array([[r.counters.produced, r.counters.consumed, r.counters.missing,
                          r.counters.remaining] for r in reports], dtype=np.int64)

    def fitness(self, X):
        return np.array([r.fitness for r in self.replay(X)], dtype=float)

    def predict(self, X):
        """1 for traces that replay without missing or remaining tokens, else 0."""
        return np.array([int(r.fits) for r in self.replay(X)], dtype=np.int64)

    def score(self, X, y=None):
        """Aggregate token-replay fitness of the log."""
        session = self._session()
        traces = check_traces(X)
        return replay_log(EventLog.from_traces(traces), session).fitness

    def __sklearn_is_fitted__(self):
        return hasattr(self, "compiled_")


__all__ = ["SecureTokenReplay", "check_net", "check_traces", "COUNTER_COLUMNS", "NotFittedError"]
