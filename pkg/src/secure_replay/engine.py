"""Server-side replay step and final-marking check.

Every operation goes through the backend contract and the sequence of
operations never depends on the values being processed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArtifactError, DimensionMismatch, ZeroDivisor


def value_bit_width(compiled):
    """Bits needed for the values a step handles with this artifact."""
    peak = max(compiled.marking_bound, int(compiled.divisors.max(initial=1)))
    return max(peak.bit_length(), 1)


def dominance_matrix(compiled):
    """0/1 matrix with [i, j] = 1 when row j outranks row i for the same target."""
    rows = compiled.n_scenarios
    rank = np.empty(rows, dtype=np.int64)
    rank[compiled.priority_order()] = np.arange(rows)
    targets = compiled.scenario_targets()
    same = targets[:, None] == targets[None, :]
    return (same & (rank[None, :] < rank[:, None])).astype(np.int64)


def priority_mask(backend, sel, dominance=None):
    """Keep only the highest-priority 1 of a 0/1 selector.

    ``out[i] = sel[i] * (1 - min(1, sum_j dominance[i, j] * sel[j]))``,
    evaluated as a clamped subtraction. Without ``dominance`` lower indices win.
    """
    if dominance is None:
        n = sel.shape[0]
        dominance = np.tril(np.ones((n, n), dtype=np.int64), k=-1)
    blocked = backend.min_const(backend.mat_vec(dominance, sel, tag="priority"), 1)
    return backend.sub_clamped(sel, blocked)


@dataclass(frozen=True)
class StepResult:
    next_marking: object
    missing: object


class ReplayEngine:
    """Matrices of one compiled net loaded for a given backend.

    The incidence matrix is split into its produce and consume parts so that
    every intermediate stays non-negative:
    ``marking + incidence @ x == max(marking + produce @ x - consume @ x, 0)``
    whenever the firing is legal.
    """

    def __init__(self, compiled, backend):
        if (compiled.divisors < 1).any():
            raise ZeroDivisor("artifact has a zero divisor")
        if compiled.final.sum() < 1:
            raise ArtifactError("artifact has an empty final marking")
        self.compiled = compiled
        self.backend = backend
        n_v = compiled.n_visible
        self._enablement = compiled.enablement
        self._divisors = compiled.divisors
        self._sequences_t = np.ascontiguousarray(compiled.sequences.T)
        self._presets_t = np.ascontiguousarray(compiled.presets.T)
        self._produce = np.maximum(compiled.incidence, 0)
        self._consume = np.maximum(-compiled.incidence, 0)
        self._produce_vis = self._produce[:, :n_v]
        self._consume_vis = self._consume[:, :n_v]
        self._final = compiled.final
        self._final_row = compiled.final[None, :]
        self._final_size = int(compiled.final.sum())
        self._dominance = dominance_matrix(compiled)
        for arr in (self._sequences_t, self._presets_t, self._produce, self._consume, self._dominance):
            arr.setflags(write=False)

    @property
    def dominance(self):
        return self._dominance

    def priority_mask(self, sel):
        return priority_mask(self.backend, sel, self._dominance)

    def _check_shapes(self, marking, event=None):
        c = self.compiled
        if tuple(marking.shape) != (c.n_places,):
            raise DimensionMismatch(f"marking has shape {tuple(marking.shape)}, expected ({c.n_places},)")
        if event is not None and tuple(event.shape) != (c.n_visible,):
            raise DimensionMismatch(f"event vector has shape {tuple(event.shape)}, expected ({c.n_visible},)")

    def step(self, marking, event, inspect=None):
        """One replay step: fire ``event`` from ``marking``, inserting missing tokens if needed.

        Both arguments are backend values. Returns the next marking and the
        number of inserted tokens. When ``inspect`` is a dict, intermediate
        values are stored in it under their names.
        """
        self._check_shapes(marking, event)
        b = self.backend
        marked = b.min_const(marking, 1)
        matches = b.mat_vec(self._enablement, b.concat(marked, event), tag="selector")
        raw = b.elem_div(matches, self._divisors)
        sel = self.priority_mask(raw)
        firing = b.mat_vec(self._sequences_t, sel, tag="sequence")
        preset = b.mat_vec(self._presets_t, event, tag="preset")

        hit = b.sum(sel)
        miss = b.sub_clamped(1, hit)

        fitting = b.sub_clamped(b.add(marking, b.mat_vec(self._produce, firing, tag="produce")),
                                b.mat_vec(self._consume, firing, tag="consume"))
        forced = b.sub_clamped(b.add(b.add(marking, preset), b.mat_vec(self._produce_vis, event, tag="produce")),
                               b.mat_vec(self._consume_vis, event, tag="consume"))
        nxt = b.add(b.scalar_mul(fitting, hit), b.scalar_mul(forced, miss))
        missing = b.scalar_mul(b.sum(preset), miss)

        if inspect is not None:
            inspect.update(marked=marked, matches=matches, raw_selector=raw, selector=sel,
                           firing=firing, preset=preset, hit=hit)
        return StepResult(nxt, missing)

    def check_final_marking(self, marking):
        """Return (flag, remaining): flag is 1 when every final place is marked."""
        self._check_shapes(marking)
        b = self.backend
        hits = b.mat_vec(self._final_row, b.min_const(marking, 1), tag="final")
        flag = b.sum(b.elem_div(hits, self._final_size))
        remaining = b.scalar_mul(b.sum(b.sub_clamped(marking, self._final)), flag)
        return flag, remaining
