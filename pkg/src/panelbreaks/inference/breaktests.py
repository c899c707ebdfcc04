"""Wald-type F statistics for coefficient breaks and the sequential break count."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..dpsearch import estimate_breaks
from ..estimator import FitOptions, FitResult, fit_breaks
from ..exceptions import (
    CapacityError,
    InfeasibleError,
    InputError,
    NumericalError,
    TruncationWarning,
)
from ..panel import BreakSet, PanelDataset, TrimmingSpec
from .critical import LEVELS, CriticalValueTable, embedded_table
from .hac import CovarianceEstimate, HacSpec, hac_covariance
from .supsearch import MAX_SETS, FEvaluator, count_admissible, max_f


@dataclass(frozen=True, eq=False)
class TestReport:
    """Outcome of one break test.

    ``critical_values`` maps significance level to critical value; ``decision``
    is ``statistic > critical_values[level]``.
    """

    __test__ = False  # keep pytest from collecting the class

    kind: str
    statistic: float
    k: int
    epsilon: float | None
    p_w: int
    level: float
    critical_values: dict
    breaks: BreakSet | None = None
    details: dict = field(default_factory=dict)
    cv_provenance: dict = field(default_factory=dict)

    @property
    def critical_value(self) -> float:
        return self.critical_values[self.level]

    @property
    def decision(self) -> bool:
        return bool(self.statistic > self.critical_value)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "statistic": float(self.statistic),
            "k": self.k,
            "epsilon": self.epsilon,
            "p_w": self.p_w,
            "level": self.level,
            "critical_values": {f"{lv:g}": float(v) for lv, v in
                                sorted(self.critical_values.items())},
            "reject": self.decision,
            "breaks": None if self.breaks is None else list(self.breaks.dates),
            "details": self.details,
            "cv_provenance": self.cv_provenance,
        }


def _trim(trim) -> TrimmingSpec:
    return trim if isinstance(trim, TrimmingSpec) else TrimmingSpec(float(trim))


def wald_quadratic(fit: FitResult, cov: CovarianceEstimate, r: np.ndarray) -> float:
    """``delta' R' (R V R')^{-1} R delta``."""
    rd = r @ fit.delta
    mid = r @ cov.v @ r.T
    try:
        sol = np.linalg.solve(mid, rd)
    except np.linalg.LinAlgError:
        raise NumericalError("R V R' is singular; the F statistic is undefined") from None
    if np.linalg.cond(mid) > 1e12:
        raise NumericalError("R V R' is numerically singular; the F statistic is undefined")
    return float(rd @ sol)


def difference_matrix(k: int, p_w: int) -> np.ndarray:
    """``R`` with rows ``delta_j - delta_{j+1}``, j = 1..k."""
    r = np.zeros((k * p_w, (k + 1) * p_w))
    eye = np.eye(p_w)
    for j in range(k):
        r[j * p_w:(j + 1) * p_w, j * p_w:(j + 1) * p_w] = eye
        r[j * p_w:(j + 1) * p_w, (j + 1) * p_w:(j + 2) * p_w] = -eye
    return r


def f_statistic(fit: FitResult, cov: CovarianceEstimate) -> float:
    """F for equal coefficients across all regimes of ``fit``."""
    k, p = fit.k, fit.p_w
    if k < 1:
        raise InputError("the F statistic needs at least one break")
    return fit.dof() / (k * p) * wald_quadratic(fit, cov, difference_matrix(k, p))


def f_known(fit: FitResult, cov: CovarianceEstimate, breaks: BreakSet | None = None, *,
            level: float = 0.05, levels=LEVELS) -> TestReport:
    """F test of no break against breaks at known dates; F-distribution critical values."""
    if breaks is not None and tuple(breaks) != fit.breaks.dates:
        raise InputError(f"fit is for breaks {fit.breaks.dates}, not {tuple(breaks)}")
    stat = f_statistic(fit, cov)
    dfn, dfd = fit.k * fit.p_w, fit.dof()
    lv = sorted(set(levels) | {level})
    cvs = {a: float(stats.f.isf(a, dfn, dfd)) for a in lv}
    return TestReport(
        kind="F_known", statistic=stat, k=fit.k, epsilon=None, p_w=fit.p_w, level=level,
        critical_values=cvs, breaks=fit.breaks,
        details={"dfn": dfn, "dfd": dfd, "p_value": float(stats.f.sf(stat, dfn, dfd)),
                 "bandwidth": cov.bandwidth},
        cv_provenance={"source": "F distribution"},
    )


def _table(cv: CriticalValueTable | None) -> CriticalValueTable:
    return cv if cv is not None else embedded_table()


def _ssr_note(search: str) -> str:
    return "ssr" if search == "ssr" else "ssr (too many break sets to enumerate)"


def _sup_f_at(data, k, trim, hac, options, search="sup", evaluator=None):
    """supF(k), its break set and the search actually used.

    ``search="sup"`` maximises F over every admissible break set when there are
    at most ``MAX_SETS`` of them and otherwise falls back to the SSR minimiser;
    ``search="ssr"`` always evaluates F at the SSR minimiser.
    """
    if search not in ("sup", "ssr"):
        raise InputError("search must be 'sup' or 'ssr'")
    if search == "sup" and count_admissible(trim, k, data.n_periods) <= MAX_SETS:
        ev = evaluator or FEvaluator(data, hac, options)
        bs, stat = max_f(data, k, trim, hac, options, ev)
        if bs is None:
            raise InfeasibleError(f"no admissible {k}-break set gives a finite F")
        return stat, bs, "sup"
    fit = estimate_breaks(data, k, trim, options).fit
    return f_statistic(fit, hac_covariance(fit, hac)), fit.breaks, _ssr_note(search)


def sup_f(data: PanelDataset, k: int, trim=0.15, hac: HacSpec | None = None, *,
          options: FitOptions | None = None, level: float = 0.05,
          cv: CriticalValueTable | None = None, search: str = "sup") -> TestReport:
    """supF(k): F maximised over admissible k-break sets."""
    trim = _trim(trim)
    if k > trim.max_breaks:
        raise CapacityError(
            f"k={k} exceeds the maximum of {trim.max_breaks} breaks for epsilon={trim.epsilon}")
    table = _table(cv)
    stat, bs, used = _sup_f_at(data, k, trim, hac, options, search)
    cvs = {lv: table.get("supF", k, data.p_w, trim.epsilon, lv)
           for lv in LEVELS if table.has("supF", k, data.p_w, trim.epsilon, lv)}
    cvs[level] = table.get("supF", k, data.p_w, trim.epsilon, level)
    return TestReport("supF", stat, k, trim.epsilon, data.p_w, level, cvs, bs,
                      {"search": used}, table.provenance_dict())


def _per_k_sup_f(data, k_max, trim, hac, options, search="sup"):
    options = options or FitOptions()
    ev = FEvaluator(data, hac, options)
    out, dp = [], None
    for k in range(1, k_max + 1):
        if search == "sup" and count_admissible(trim, k, data.n_periods) <= MAX_SETS:
            out.append(_sup_f_at(data, k, trim, hac, options, "sup", ev))
        elif data.p_x == 0:
            # one DP pass yields the SSR minimiser for every k
            if dp is None:
                dp = estimate_breaks(data, k_max, trim, options)
            bs = dp.per_k_optima[k][0]
            fit = fit_breaks(data, bs, options)
            out.append((f_statistic(fit, hac_covariance(fit, hac)), bs, _ssr_note(search)))
        else:
            out.append(_sup_f_at(data, k, trim, hac, options, "ssr"))
            out[-1] = out[-1][:2] + (_ssr_note(search),)
    return out


def wdmax_f(data: PanelDataset, k_max: int, trim=0.15, hac: HacSpec | None = None, *,
            options: FitOptions | None = None, level: float = 0.05, weights: str = "level",
            cv: CriticalValueTable | None = None, search: str = "sup") -> TestReport:
    """Weighted double maximum of supF(k), k = 1..k_max.

    ``weights="level"`` scales supF(k) by ``c(level, 1) / c(level, k)``, the
    critical values of supF at the requested level; ``weights="unit"`` uses 1.
    The statistic is level-dependent under level weights, so ``critical_values``
    holds only the requested level in that case.
    """
    trim = _trim(trim)
    if weights not in ("level", "unit"):
        raise InputError("weights must be 'level' or 'unit'")
    if k_max > trim.max_breaks:
        raise CapacityError(
            f"k_max={k_max} exceeds the maximum of {trim.max_breaks} breaks for "
            f"epsilon={trim.epsilon}")
    table = _table(cv)
    p, eps = data.p_w, trim.epsilon
    if weights == "unit":
        wts = np.ones(k_max)
        kind = "UDmax"
        cvs = {lv: table.get(kind, k_max, p, eps, lv) for lv in LEVELS
               if table.has(kind, k_max, p, eps, lv)}
    else:
        c = np.array([table.get("supF", k, p, eps, level) for k in range(1, k_max + 1)])
        wts = c[0] / c
        kind = "WDmax"
        cvs = {}
    cvs[level] = table.get(kind, k_max, p, eps, level)
    per_k = _per_k_sup_f(data, k_max, trim, hac, options, search)
    weighted = [w * s for w, (s, _, _) in zip(wts, per_k)]
    j = int(np.argmax(weighted))
    return TestReport(
        "WDmaxF", float(weighted[j]), k_max, eps, p, level, cvs, per_k[j][1],
        {"weights": weights, "weight_values": wts.tolist(),
         "sup_f": [float(s) for s, _, _ in per_k], "argmax_k": j + 1,
         "break_sets": [list(b.dates) for _, b, _ in per_k],
         "search": [u for _, _, u in per_k]},
        table.provenance_dict(),
    )


def _windows(breaks: BreakSet, epsilon: float) -> list[tuple[int, int, int]]:
    """(regime, first candidate, last candidate) of each within-regime search window.

    The window trims a fraction ``epsilon`` of the regime at each end and is
    further limited so that both new regimes keep the minimum length
    ``ceil(epsilon * T)``; the enlarged break set is therefore admissible.
    """
    h = TrimmingSpec(epsilon).min_length(breaks.n_periods)
    out = []
    for j, (lo, hi) in enumerate(breaks.regimes):
        start = lo - 1
        length = hi - start
        a = math.ceil(round(start + length * epsilon, 9))
        b = math.floor(round(hi - length * epsilon, 9))
        a, b = max(a, start + h), min(b, hi - h)
        out.append((j, a, b))
    return out


def seq_f_statistic(data: PanelDataset, breaks: BreakSet, trim, hac: HacSpec | None = None,
                    options: FitOptions | None = None, search: str = "sup",
                    evaluator: FEvaluator | None = None):
    """``F(k+1 | k)`` with the regime and date that attain it.

    Within each regime the added date maximises the single-restriction F
    (``search="sup"``) or minimises the full-model SSR (``search="ssr"``).
    Returns ``(statistic, regime, date, per_regime)``.
    """
    trim = _trim(trim)
    options = options or FitOptions()
    if search not in ("ssr", "sup"):
        raise InputError("search must be 'sup' or 'ssr'")
    ev = evaluator or FEvaluator(data, hac, options)
    p = data.p_w
    best = None
    per_regime = []
    for j, a, b in _windows(breaks, trim.epsilon):
        cand = None
        for d in range(a, b + 1):
            bs = breaks.with_date(d)
            r = np.zeros((p, (bs.k + 1) * p))
            r[:, j * p:(j + 1) * p] = np.eye(p)
            r[:, (j + 1) * p:(j + 2) * p] = -np.eye(p)
            if search == "sup":
                f = ev.f(bs, r)
                key = f
            else:
                try:
                    key = -fit_breaks(data, bs, options).ssr
                except NumericalError:
                    continue
                if cand is not None and not key > cand[0]:
                    continue
                f = ev.f(bs, r)
            if f is None or (cand is not None and not key > cand[0]):
                continue
            cand = (key, f, d)
        if cand is None:
            continue
        per_regime.append({"regime": j + 1, "date": cand[2], "f": cand[1]})
        if best is None or cand[1] > best[1]:
            best = (j, cand[1], cand[2])
    if best is None:
        raise InfeasibleError("no regime has a feasible window for an additional break")
    return best[1], best[0] + 1, best[2], per_regime


def seq_f(data: PanelDataset, k: int, trim=0.15, hac: HacSpec | None = None,
          breaks: BreakSet | None = None, *, options: FitOptions | None = None,
          level: float = 0.05, cv: CriticalValueTable | None = None,
          search: str = "sup") -> TestReport:
    """Test k breaks against k+1; dates are estimated unless ``breaks`` is given."""
    trim = _trim(trim)
    table = _table(cv)
    if breaks is None:
        breaks = (BreakSet((), data.n_periods) if k == 0
                  else estimate_breaks(data, k, trim, options).best_breaks)
    elif breaks.k != k:
        raise InputError(f"breaks has {breaks.k} dates, expected k={k}")
    stat, regime, date, per = seq_f_statistic(data, breaks, trim, hac, options, search)
    p, eps = data.p_w, trim.epsilon
    cvs = {lv: table.seq_critical(k, p, eps, lv) for lv in LEVELS
           if table.has("seqF", k, p, eps, lv)}
    cvs[level] = table.seq_critical(k, p, eps, level)
    return TestReport(
        "seqF", stat, k, eps, p, level, cvs, breaks.with_date(date),
        {"regime": regime, "added_date": date, "per_regime": per, "search": search,
         "null_breaks": list(breaks.dates)},
        table.provenance_dict(),
    )


def _ssr_date(data: PanelDataset, breaks: BreakSet, regime: int, trim: TrimmingSpec,
              options: FitOptions | None) -> int | None:
    """Date in the window of ``regime`` (1-based) minimising the (k+1)-break SSR."""
    options = options or FitOptions()
    _, a, b = _windows(breaks, trim.epsilon)[regime - 1]
    best, best_ssr = None, np.inf
    for d in range(a, b + 1):
        try:
            ssr = fit_breaks(data, breaks.with_date(d), options).ssr
        except NumericalError:
            continue
        if ssr < best_ssr:
            best, best_ssr = d, ssr
    return best


@dataclass(frozen=True)
class BreakCountResult:
    """Sequential estimate of the number of breaks with its decision log."""

    k_hat: int
    breaks: BreakSet
    log: list
    truncated: bool

    def to_dict(self) -> dict:
        return {"k_hat": self.k_hat, "breaks": list(self.breaks.dates), "log": self.log,
                "truncated": self.truncated}


def estimate_num_breaks(data: PanelDataset, trim=0.15, hac: HacSpec | None = None,
                        alpha: float | None = 0.05, k_cap: int | None = None, *,
                        options: FitOptions | None = None, shrink_constant: float | None = None,
                        cv: CriticalValueTable | None = None,
                        search: str = "sup") -> BreakCountResult:
    """Add breaks one at a time while ``F(k+1 | k)`` rejects.

    The level is ``alpha``, or ``shrink_constant / (N T)`` when a constant is
    given. After a rejection the new date is estimated by least squares inside
    the regime whose statistic was largest. Stops at
    the first non-rejection, at ``k_cap`` (with :class:`TruncationWarning`), or
    when no regime can host another break.
    """
    trim = _trim(trim)
    if shrink_constant is not None:
        alpha = shrink_constant / (data.n_units * data.n_periods)
    if alpha is None or not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    k_cap = trim.max_breaks if k_cap is None else int(k_cap)
    if k_cap > trim.max_breaks:
        raise CapacityError(
            f"k_cap={k_cap} exceeds the maximum of {trim.max_breaks} breaks for "
            f"epsilon={trim.epsilon}")
    table = _table(cv)
    ev = FEvaluator(data, hac, options or FitOptions())
    breaks = BreakSet((), data.n_periods)
    log = []
    truncated = False
    while True:
        if breaks.k >= k_cap:
            truncated = True
            warnings.warn(f"sequential procedure stopped at the cap of {k_cap} breaks",
                          TruncationWarning, stacklevel=2)
            break
        try:
            stat, regime, date, _ = seq_f_statistic(data, breaks, trim, hac, options, search,
                                                    ev)
        except InfeasibleError:
            log.append({"k": breaks.k, "infeasible": True})
            break
        crit = table.seq_critical(breaks.k, data.p_w, trim.epsilon, alpha)
        reject = bool(stat > crit)
        entry = {"k": breaks.k, "statistic": float(stat), "critical_value": float(crit),
                 "alpha": float(alpha), "reject": reject, "regime": regime,
                 "f_argmax_date": date}
        log.append(entry)
        if not reject:
            break
        date = _ssr_date(data, breaks, regime, trim, options) or date
        entry["added_date"] = date
        breaks = breaks.with_date(date)
    return BreakCountResult(breaks.k, breaks, log, truncated)
