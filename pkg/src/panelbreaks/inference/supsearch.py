"""Maximisation of F over admissible break sets.

With regime-partitioned averages, the date that minimises the SSR need not
maximise F: the extra projection columns absorb noise of larger order than
the Wald term under the null. The sup statistics therefore search F directly.
When x is absent and every average column is regime-local, the defactored
data of each segment are cached and a break set costs only a few small solves.
"""

from __future__ import annotations

import math

import numpy as np

from ..defactor import RCOND_ERROR, Projector
from ..dpsearch import segment_zbase
from ..estimator import FitOptions, check_gram, fit_breaks
from ..exceptions import IllConditionedError, NumericalError, SingularGramError
from ..panel import BreakSet, PanelDataset, TrimmingSpec, enumerate_admissible
from .hac import HacSpec, bartlett_long_run, hac_covariance

MAX_SETS = 5000


def count_admissible(trim: TrimmingSpec, k: int, n_periods: int) -> int:
    h = trim.min_length(n_periods)
    free = n_periods - (k + 1) * h
    return math.comb(free + k, k) if free >= 0 else 0


def segment_local(data: PanelDataset, options: FitOptions) -> bool:
    """True when the full-fit projection is block diagonal by regime."""
    pooled_obs = options.include_observed and data.p_d and options.observed_layout == "pooled"
    return data.p_x == 0 and not pooled_obs


class SegmentCache:
    """Per-segment defactored data for the x-free, segment-local case."""

    def __init__(self, data: PanelDataset, options: FitOptions, lag: int):
        self.data = data
        self.lag = lag
        self.zbase = segment_zbase(data, breaking_x=False, options=options)
        self._store: dict = {}
        self._cross: dict = {}

    def get(self, a: int, b: int):
        """``(delta, G, scores, within)`` for periods ``a+1..b``; ``None`` if infeasible.

        ``within`` is the unnormalised Bartlett sum of the segment's own scores.
        """
        key = (a, b)
        if key not in self._store:
            z = self.zbase[a:b]
            z = z[:, np.any(z != 0, axis=0)]
            try:
                proj = Projector(z, on_singular="raise")
            except IllConditionedError:
                self._store[key] = None
                return None
            if proj.rcond < RCOND_ERROR:
                self._store[key] = None
                return None
            yt = proj.apply(self.data.y[:, a:b])
            wt = proj.apply(self.data.w[:, a:b, :])
            p = wt.shape[2]
            wf = wt.reshape(-1, p)
            g = wf.T @ wf
            raw = self.data.w[:, a:b, :]
            try:
                check_gram(g, raw_ss=np.einsum("ntp,ntp->p", raw, raw))
            except SingularGramError:
                self._store[key] = None
                return None
            c = wf.T @ yt.reshape(-1)
            dj = np.linalg.solve(g, c)
            scores = (yt - wt @ dj)[:, :, None] * wt
            within = bartlett_long_run(scores, min(self.lag, b - a - 1), 1.0)
            self._store[key] = (dj, g, scores, within)
        return self._store[key]

    def boundary(self, left: tuple, right: tuple) -> np.ndarray:
        """Bartlett-weighted lag sums pairing the first periods of ``right`` with the last of ``left``."""
        key = left + right
        if key not in self._cross:
            a_sc, b_sc = self._store[right][2], self._store[left][2]
            p = a_sc.shape[2]
            cross = np.zeros((p, p))
            for lag_l in range(1, self.lag + 1):
                a = a_sc[:, :lag_l].reshape(-1, p)
                b = b_sc[:, b_sc.shape[1] - lag_l:].reshape(-1, p)
                cross += (1.0 - lag_l / (self.lag + 1.0)) * (a.T @ b)
            self._cross[key] = cross
        return self._cross[key]


def _fast_pieces(cache: SegmentCache, breaks: BreakSet, lag: int):
    data = cache.data
    n, t, p = data.n_units, data.n_periods, data.p_w
    k1 = breaks.k + 1
    if min(breaks.regime_lengths()) <= lag:
        return _fast_pieces_dense(cache, breaks, lag)
    delta = np.empty(k1 * p)
    omega = np.zeros((k1 * p, k1 * p))
    phi = np.zeros((k1 * p, k1 * p))
    prev = None
    for j, (lo, hi) in enumerate(breaks.regimes):
        seg = cache.get(lo - 1, hi)
        if seg is None:
            return None
        dj, g, scores, within = seg
        sl = slice(j * p, (j + 1) * p)
        delta[sl] = dj
        omega[sl, sl] = g / (n * t)
        phi[sl, sl] = within
        if prev is not None:
            cross = cache.boundary(prev, (lo - 1, hi))
            pl = slice((j - 1) * p, j * p)
            phi[sl, pl] = cross
            phi[pl, sl] = cross.T
        prev = (lo - 1, hi)
    phi /= n * t
    oinv = np.linalg.inv(omega)
    v = oinv @ phi @ oinv
    dof = n * (t - k1 * p) - k1 * p
    return delta, 0.5 * (v + v.T), dof


def _fast_pieces_dense(cache: SegmentCache, breaks: BreakSet, lag: int):
    """Same result through the full score array; used when a regime is no longer than L."""
    data = cache.data
    n, t, p = data.n_units, data.n_periods, data.p_w
    k1 = breaks.k + 1
    scores = np.zeros((n, t, k1 * p))
    delta = np.empty(k1 * p)
    omega = np.zeros((k1 * p, k1 * p))
    for j, (lo, hi) in enumerate(breaks.regimes):
        seg = cache.get(lo - 1, hi)
        if seg is None:
            return None
        dj, g, sc, _ = seg
        sl = slice(j * p, (j + 1) * p)
        delta[sl] = dj
        omega[sl, sl] = g / (n * t)
        scores[:, lo - 1:hi, sl] = sc
    phi = bartlett_long_run(scores, lag, n * t)
    oinv = np.linalg.inv(omega)
    v = oinv @ phi @ oinv
    dof = n * (t - k1 * p) - k1 * p
    return delta, 0.5 * (v + v.T), dof


class FEvaluator:
    """Coefficients, sandwich covariance and DoF for arbitrary break sets of one panel."""

    def __init__(self, data: PanelDataset, hac: HacSpec | None, options: FitOptions | None):
        self.data = data
        self.hac = hac or HacSpec()
        self.options = options or FitOptions()
        self.lag = self.hac.resolve(data.n_periods)
        self.cache = SegmentCache(data, self.options, self.lag) if segment_local(
            data, self.options) else None

    def pieces(self, breaks: BreakSet):
        """``(delta, V, dof)`` or ``None`` when the break set is numerically infeasible."""
        if self.cache is not None:
            return _fast_pieces(self.cache, breaks, self.lag)
        try:
            fit = fit_breaks(self.data, breaks, self.options)
            cov = hac_covariance(fit, self.hac)
        except NumericalError:
            return None
        return fit.delta, cov.v, fit.dof()

    def f(self, breaks: BreakSet, r: np.ndarray | None = None) -> float | None:
        """F for ``R delta = 0``; all adjacent differences when ``r`` is None."""
        pc = self.pieces(breaks)
        if pc is None:
            return None
        delta, v, dof = pc
        p = self.data.p_w
        if r is None:
            from .breaktests import difference_matrix

            r = difference_matrix(breaks.k, p)
        rd = r @ delta
        mid = r @ v @ r.T
        if np.linalg.cond(mid) > 1e12:
            return None
        return float(dof / r.shape[0] * (rd @ np.linalg.solve(mid, rd)))


def max_f(data: PanelDataset, k: int, trim: TrimmingSpec, hac: HacSpec | None,
          options: FitOptions | None, evaluator: FEvaluator | None = None):
    """Exact ``max F`` over admissible k-break sets (first maximiser in lexicographic order)."""
    ev = evaluator or FEvaluator(data, hac, options)
    best, best_f = None, -np.inf
    for bs in enumerate_admissible(trim, k, data.n_periods):
        f = ev.f(bs)
        if f is not None and f > best_f:
            best, best_f = bs, f
    return best, best_f
