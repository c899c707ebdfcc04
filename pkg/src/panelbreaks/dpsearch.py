"""Global minimisation of the SSR over admissible break sets.

With regime-partitioned averages the projection is block diagonal by regime,
so the objective adds up over segments. A triangular table of segment SSRs is
computed once from pooled cross-products (cost independent of N) and a dynamic
programme combines it. With non-breaking regressors present the search
alternates between the break dates and their coefficient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .defactor import (
    RCOND_ERROR,
    DefactoredPanel,
    Projector,
    RankDiagnostic,
    build_averages,
    project,
    regime_expand,
)
from .estimator import (ANNIHILATION_TOL, PD_TOL, FitOptions, FitResult, check_gram, fit,
                        fit_breaks)
from .exceptions import CapacityError, InfeasibleError
from .panel import BreakSet, PanelDataset, TrimmingSpec, enumerate_admissible

TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class SegmentTable:
    """SSR of every admissible single-regime segment.

    ``ssr[a - 1, b - 1]`` is the SSR for periods ``a..b`` (1-based, inclusive),
    ``inf`` for segments shorter than ``min_length`` or numerically infeasible.
    """

    ssr: np.ndarray
    min_length: int
    n_evaluations: int

    @property
    def n_periods(self) -> int:
        return self.ssr.shape[0]

    def cost(self, a: int, b: int) -> float:
        """SSR of periods ``a..b`` (1-based, inclusive)."""
        return float(self.ssr[a - 1, b - 1])

    def partition_ssr(self, breaks: BreakSet) -> float:
        """Sum of segment SSRs, accumulated right to left to match the DP."""
        total = 0.0
        for lo, hi in reversed(breaks.regimes):
            total = self.cost(lo, hi) + total
        return total


def segment_zbase(data: PanelDataset, *, breaking_x: bool, options: FitOptions) -> np.ndarray:
    """Columns whose segment-local restriction forms the averages in a DP pass.

    Every column enters regime by regime, so observed factors are local to
    the segment here even when the final fit pools them.
    """
    cols = []
    if breaking_x and data.p_x:
        cols.append(data.x.mean(axis=0))
    cols.append(data.w.mean(axis=0))
    if options.include_observed and data.p_d:
        cols.append(data.observed_factors)
    if options.breaking_constant:
        cols.append(np.ones((data.n_periods, 1)))
    return np.ascontiguousarray(np.concatenate(cols, axis=1))


def build_segment_table(y: np.ndarray, r: np.ndarray, zbase: np.ndarray,
                        min_length: int) -> SegmentTable:
    """Segment SSR table for regressing ``y`` (N x T) on ``r`` (N x T x p)."""
    n, t = y.shape
    p = r.shape[2]
    rf = np.ascontiguousarray(r.reshape(n, t * p))
    s_rr = (rf.T @ rf).reshape(t, p, t, p)
    s_ry = (rf.T @ y).reshape(t, p, t)
    s_yy = y.T @ y
    ssr, count = _kernels.segment_table(
        np.ascontiguousarray(s_rr), np.ascontiguousarray(s_ry), np.ascontiguousarray(s_yy),
        np.ascontiguousarray(zbase, dtype=float), int(min_length), RCOND_ERROR, PD_TOL,
        ANNIHILATION_TOL,
    )
    return SegmentTable(ssr=ssr, min_length=int(min_length), n_evaluations=int(count))


def dp_minimize(table: SegmentTable, k: int) -> list[tuple[BreakSet, float]]:
    """Optimal partitions for 0..k breaks.

    Among partitions whose SSR is within ``1e-12`` (relative) of the optimum,
    the lexicographically smallest date vector is returned. Raises
    :class:`InfeasibleError` if no admissible k-break partition has finite SSR.
    """
    t = table.n_periods
    cost = table.ssr
    # suffix[j][a]: best SSR for periods a+1..T split into j+1 segments
    suffix = [cost[:, t - 1].copy()]
    stage = []
    for j in range(1, k + 1):
        prev = np.full(t + 1, np.inf)
        prev[:t] = suffix[-1]
        with np.errstate(invalid="ignore"):
            cand = cost[:, : t - 1] + prev[1:t][None, :]
        cand[np.isnan(cand)] = np.inf
        stage.append(cand)
        suffix.append(cand.min(axis=1))
    out = []
    for kk in range(k + 1):
        total = suffix[kk][0]
        if not np.isfinite(total):
            if kk == k:
                raise InfeasibleError(f"no admissible partition with {k} breaks has finite SSR")
            out.append((None, np.inf))
            continue
        dates, a = [], 0
        for r in range(kk, 0, -1):
            row = stage[r - 1][a]
            target = suffix[r][a]
            tol = TIE_RTOL * max(abs(total), np.finfo(float).tiny)
            b = int(np.flatnonzero(row <= target + tol)[0]) + 1
            dates.append(b)
            a = b
        bs = BreakSet(tuple(dates), t)
        out.append((bs, table.partition_ssr(bs)))
    return out


def brute_force_minimize(table: SegmentTable, trim: TrimmingSpec, k: int) -> tuple[BreakSet, float]:
    """Exhaustive minimiser over admissible k-break sets, first in lexicographic order wins."""
    best, best_ssr = None, np.inf
    for bs in enumerate_admissible(trim, k, table.n_periods):
        s = table.partition_ssr(bs)
        if s < best_ssr:
            best, best_ssr = bs, s
    if best is None:
        raise InfeasibleError(f"no admissible partition with {k} breaks has finite SSR")
    return best, best_ssr


@dataclass(frozen=True, eq=False)
class SearchResult:
    """Outcome of :func:`estimate_breaks`.

    ``per_k_optima`` holds the optimal break set and DP objective for every
    k' <= k from the last DP pass. ``history`` lists the break set after each
    pass; when ``converged`` is False the last two entries disagree.
    """

    best_breaks: BreakSet
    best_ssr: float
    fit: FitResult
    per_k_optima: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list)
    n_segment_evaluations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "breaks": list(self.best_breaks.dates),
            "ssr": float(self.best_ssr),
            "per_k_optima": [
                {"k": kk, "breaks": None if bs is None else list(bs.dates), "ssr": float(s)}
                for kk, (bs, s) in enumerate(self.per_k_optima)
            ],
            "iterations": self.iterations,
            "converged": self.converged,
            "history": [list(b.dates) for b in self.history],
        }


def _structural_delta(data: PanelDataset, breaks: BreakSet, zbase: np.ndarray) -> np.ndarray:
    """W-coefficients when x and w both break and every average is regime-local."""
    r = np.concatenate([data.x, data.w], axis=2)
    proj = Projector(regime_expand(zbase, breaks))
    dp = DefactoredPanel(
        y_t=proj.apply(data.y), x_t=np.zeros((data.n_units, data.n_periods, 0)),
        w_t=proj.apply(regime_expand(r, breaks)), breaks=breaks,
        rank=RankDiagnostic(proj.rank, proj.q, proj.rcond), p_w=r.shape[2],
    )
    return fit(dp).delta_by_regime[:, data.p_x:]


def _beta_given_delta(data: PanelDataset, breaks: BreakSet, delta: np.ndarray,
                      options: FitOptions) -> np.ndarray:
    """OLS of the defactored ``y - W(T) delta`` on defactored x, averages of x only."""
    wd = regime_expand(data.w, breaks) @ delta.reshape(-1)
    avg = build_averages(
        data, breaks, x_layout="pooled", w_layout="none",
        include_observed=options.include_observed, observed_layout=options.observed_layout,
        breaking_constant=options.breaking_constant,
    )
    dp = project(data.with_y(data.y - wd), avg, breaks)
    n, t = dp.y_t.shape
    xm = dp.x_t.reshape(n * t, -1)
    gram = xm.T @ xm
    check_gram(gram, "X~'X~")
    return np.linalg.solve(gram, xm.T @ dp.y_t.reshape(-1))


def estimate_breaks(
    data: PanelDataset,
    k: int,
    trim: TrimmingSpec | float = 0.15,
    options: FitOptions | None = None,
    *,
    max_iter: int = 10,
) -> SearchResult:
    """Estimate ``k`` break dates by global SSR minimisation.

    Without non-breaking regressors a single DP pass is exact. Otherwise the
    search starts from a pass in which x breaks as well, fixes the slope of x,
    re-runs the DP on ``y - x beta`` and refits, repeating until the dates settle
    or ``max_iter`` passes are spent.
    """
    options = options or FitOptions()
    if not isinstance(trim, TrimmingSpec):
        trim = TrimmingSpec(float(trim))
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > trim.max_breaks:
        raise CapacityError(
            f"k={k} exceeds the maximum of {trim.max_breaks} breaks for epsilon={trim.epsilon}"
        )
    t = data.n_periods
    h = trim.min_length(t)
    if (k + 1) * h > t:
        raise InfeasibleError(f"T={t} too short for {k} breaks with minimum regime length {h}")
    if k == 0:
        res = fit_breaks(data, BreakSet((), t), options)
        return SearchResult(BreakSet((), t), res.ssr, res, [(BreakSet((), t), res.ssr)], 0,
                            True, [BreakSet((), t)], [])

    evals = []
    if data.p_x == 0:
        table = build_segment_table(data.y, data.w, segment_zbase(data, breaking_x=False,
                                                                  options=options), h)
        evals.append(table.n_evaluations)
        per_k = dp_minimize(table, k)
        bs = per_k[k][0]
        res = fit_breaks(data, bs, options)
        return SearchResult(bs, res.ssr, res, per_k, 1, True, [bs], evals)

    # step 1: x and w both breaking
    r = np.concatenate([data.x, data.w], axis=2)
    zb_joint = segment_zbase(data, breaking_x=True, options=options)
    table = build_segment_table(data.y, r, zb_joint, h)
    evals.append(table.n_evaluations)
    per_k = dp_minimize(table, k)
    current = per_k[k][0]
    history = [current]
    zb = segment_zbase(data, breaking_x=False, options=options)
    converged = False
    delta = _structural_delta(data, current, zb_joint)
    beta = _beta_given_delta(data, current, delta, options)
    res = None
    it = 0
    for it in range(1, max_iter + 1):
        ytil = data.y - data.x @ beta
        table = build_segment_table(ytil, data.w, zb, h)
        evals.append(table.n_evaluations)
        per_k = dp_minimize(table, k)
        new = per_k[k][0]
        res = fit_breaks(data, new, options)
        history.append(new)
        if new.dates == current.dates:
            converged = True
            current = new
            break
        current = new
        beta = res.beta
    if not converged:
        warnings.warn(
            f"break dates did not settle after {max_iter} passes; last two: "
            f"{list(history[-2].dates)} and {list(history[-1].dates)}",
            RuntimeWarning, stacklevel=2,
        )
    return SearchResult(current, res.ssr, res, per_k, it, converged, history, evals)
