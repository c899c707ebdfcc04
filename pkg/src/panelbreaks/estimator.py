"""Pooled OLS on the defactored, regime-expanded system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .defactor import (
    DefactoredPanel,
    Projector,
    RankDiagnostic,
    build_averages,
    project,
)
from .exceptions import IllConditionedError, SingularGramError
from .panel import BreakSet, PanelDataset

PD_TOL = 1e-10
# a column keeping less than this share of its raw sum of squares was annihilated
ANNIHILATION_TOL = 1e-10


@dataclass(frozen=True)
class FitOptions:
    """Model options shared by estimation, testing and the CLI.

    Attributes
    ----------
    breaking_constant : bool
        Append one indicator column per regime to the averages.
    include_observed : bool
        Append the observed common factors to the averages.
    observed_layout : {"pooled", "regime"}
        Observed factors enter once, or once per regime (breaking loadings).
    """

    breaking_constant: bool = False
    include_observed: bool = True
    observed_layout: str = "pooled"

    def to_dict(self) -> dict:
        return {
            "breaking_constant": self.breaking_constant,
            "include_observed": self.include_observed,
            "observed_layout": self.observed_layout,
        }


def check_gram(gram: np.ndarray, what: str = "Gram matrix", tol: float = PD_TOL,
               raw_ss: np.ndarray | None = None) -> None:
    """Raise unless the unit-diagonal rescaling of ``gram`` has min eigenvalue > tol.

    ``raw_ss`` holds each column's sum of squares before defactoring; a column
    whose defactored share falls to rounding level counts as annihilated, since
    the unit-diagonal rescaling alone would let pure rounding noise through.
    """
    if gram.shape[0] == 0:
        return
    d = np.diag(gram)
    floor = 0.0 if raw_ss is None else ANNIHILATION_TOL * np.asarray(raw_ss)
    if not np.all(d > floor):
        raise SingularGramError(
            f"{what} has {int(np.sum(~(d > floor)))} regressor(s) annihilated by defactoring; "
            "the non-collinearity condition fails"
        )
    s = np.sqrt(d)
    lam = np.linalg.eigvalsh(gram / np.outer(s, s))[0]
    if not lam > tol:
        raise SingularGramError(
            f"{what} not positive definite (scaled min eigenvalue {lam:.3g}); "
            "regressors are collinear after defactoring"
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    """Coefficients, residuals and SSR for one break set.

    ``delta`` stacks the regime coefficients as ``(delta_1', ..., delta_{k+1}')'``;
    ``checked_w`` holds the rows of ``M_X W~`` that feed the HAC estimator.
    """

    beta: np.ndarray
    delta: np.ndarray
    ssr: float
    residuals: np.ndarray
    checked_w: np.ndarray
    breaks: BreakSet
    p_w: int
    rank: RankDiagnostic | None = None
    options: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return self.residuals.shape[0]

    @property
    def n_periods(self) -> int:
        return self.residuals.shape[1]

    @property
    def p_x(self) -> int:
        return self.beta.shape[0]

    @property
    def k(self) -> int:
        return self.breaks.k

    @property
    def delta_by_regime(self) -> np.ndarray:
        return self.delta.reshape(self.k + 1, self.p_w)

    @property
    def delta_increments(self) -> np.ndarray:
        """``Delta_j = delta_{j+1} - delta_j``, shape (k, p_w)."""
        return np.diff(self.delta_by_regime, axis=0)

    def dof(self, extra_regimes: int = 0) -> float:
        """``N (T - p_x - (k+1) p_w) - p_x - (k+1) p_w`` used by the F normalisation."""
        n, t = self.n_units, self.n_periods
        q = self.p_x + (self.k + 1 + extra_regimes) * self.p_w
        return n * (t - q) - q

    def to_dict(self, w_names=None, x_names=None) -> dict:
        w_names = list(w_names or [f"w{j + 1}" for j in range(self.p_w)])
        x_names = list(x_names or [f"x{j + 1}" for j in range(self.p_x)])
        out = {
            "breaks": list(self.breaks.dates),
            "n_periods": self.n_periods,
            "n_units": self.n_units,
            "ssr": float(self.ssr),
            "beta": {n: float(v) for n, v in zip(x_names, self.beta)},
            "delta": [
                {n: float(v) for n, v in zip(w_names, row)} for row in self.delta_by_regime
            ],
            "delta_increments": [
                {n: float(v) for n, v in zip(w_names, row)} for row in self.delta_increments
            ],
            "options": dict(self.options),
        }
        if self.rank is not None:
            out["rank"] = self.rank.to_dict()
        return out


def fit(defactored: DefactoredPanel, options: dict | None = None) -> FitResult:
    """Partitioned (Frisch-Waugh) pooled OLS of y~ on (X~, W~)."""
    y = defactored.y_t
    n, t = y.shape
    yv = y.reshape(-1)
    wm = defactored.w_t.reshape(n * t, -1)
    xm = defactored.x_t.reshape(n * t, -1)
    p_x = xm.shape[1]
    if p_x:
        gx = xm.T @ xm
        check_gram(gx, "X~'X~", raw_ss=defactored.x_raw_ss)
        cx = linalg.cho_factor(gx)
        wc = wm - xm @ linalg.cho_solve(cx, xm.T @ wm)
        yc = yv - xm @ linalg.cho_solve(cx, xm.T @ yv)
    else:
        wc, yc = wm, yv
    gw = wc.T @ wc
    check_gram(gw, "W~'M_X W~", raw_ss=defactored.w_raw_ss)
    delta = linalg.cho_solve(linalg.cho_factor(gw), wc.T @ yc)
    resid = yc - wc @ delta
    beta = linalg.cho_solve(cx, xm.T @ (yv - wm @ delta)) if p_x else np.zeros(0)
    return FitResult(
        beta=beta,
        delta=delta,
        ssr=float(resid @ resid),
        residuals=resid.reshape(n, t),
        checked_w=wc.reshape(n, t, -1),
        breaks=defactored.breaks,
        p_w=defactored.p_w,
        rank=defactored.rank,
        options=dict(options or {}),
    )


def fit_breaks(
    data: PanelDataset,
    breaks: BreakSet | tuple,
    options: FitOptions | None = None,
    *,
    on_singular: str = "raise",
) -> FitResult:
    """Defactor with the full averages for ``breaks`` and fit."""
    options = options or FitOptions()
    if not isinstance(breaks, BreakSet):
        breaks = BreakSet(tuple(breaks), data.n_periods)
    avg = build_averages(
        data, breaks,
        x_layout="pooled", w_layout="regime",
        include_observed=options.include_observed,
        observed_layout=options.observed_layout,
        breaking_constant=options.breaking_constant,
    )
    return fit(project(data, avg, breaks, on_singular=on_singular), options.to_dict())


def ssr_segment(y: np.ndarray, r: np.ndarray, zbase: np.ndarray, a: int, b: int) -> float:
    """SSR of a single-regime pooled fit on periods ``a..b`` (1-based, inclusive).

    The segment is defactored with its own rows of ``zbase``. Returns ``inf``
    when the segment averages are ill-conditioned or the Gram matrix singular.
    This is the direct route; the segment table computes the same numbers from
    cached cross-products.
    """
    sl = slice(a - 1, b)
    z = zbase[sl]
    z = z[:, np.any(z != 0, axis=0)]
    if z.shape[1] >= b - a + 1:
        return np.inf  # the projection leaves no residual periods
    try:
        proj = Projector(z, on_singular="raise")
    except IllConditionedError:
        return np.inf
    ys = proj.apply(y[:, sl])
    rs = proj.apply(r[:, sl, :])
    n, length = ys.shape
    rm = rs.reshape(n * length, -1)
    yv = ys.reshape(-1)
    gram = rm.T @ rm
    try:
        check_gram(gram, raw_ss=np.einsum("ntp,ntp->p", r[:, sl], r[:, sl]))
    except SingularGramError:
        return np.inf
    coef = np.linalg.solve(gram, rm.T @ yv)
    e = yv - rm @ coef
    return float(e @ e)
