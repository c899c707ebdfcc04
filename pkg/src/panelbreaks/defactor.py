"""Cross-sectional averages and the projection that removes the estimated factor space.

The averages of the regressors span the unobserved factors asymptotically, so
pre-multiplying every unit's time series by ``M = I - Z (Z'Z)^{-1} Z'`` defactors
it. The regime-partitioned average of the breaking regressors makes ``Z`` depend
on the candidate break set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConditioningWarning, IllConditionedError, RankWarning
from .panel import BreakSet, PanelDataset

RCOND_ERROR = 1e-12
RCOND_WARN = 1e-8

_LAYOUTS = ("pooled", "regime", "none")


def regime_expand(a: np.ndarray, breaks: BreakSet, axis: int = -2) -> np.ndarray:
    """Block-diagonal regime stack of a (..., T, p) array -> (..., T, (k+1) p).

    Column block ``j`` holds the data for periods in regime ``j`` and zeros
    elsewhere, matching ``delta = (delta_1', ..., delta_{k+1}')'``.
    """
    a = np.asarray(a, dtype=float)
    if axis not in (-2, a.ndim - 2):
        raise ValueError("time must be the second-to-last axis")
    reg = breaks.regime_index()
    k1 = breaks.k + 1
    onehot = (reg[:, None] == np.arange(k1)[None, :]).astype(float)  # T x (k+1)
    out = a[..., :, None, :] * onehot[:, :, None]
    return out.reshape(*a.shape[:-1], k1 * a.shape[-1])


@dataclass(frozen=True)
class AverageBlock:
    """The T x q matrix of averages (and observed/indicator columns) to project on."""

    z_bar: np.ndarray
    columns: tuple
    breaks: BreakSet

    @property
    def q(self) -> int:
        return self.z_bar.shape[1]


def build_averages(
    data: PanelDataset,
    breaks: BreakSet,
    *,
    x_layout: str = "pooled",
    w_layout: str = "regime",
    include_observed: bool = True,
    observed_layout: str = "pooled",
    breaking_constant: bool = False,
) -> AverageBlock:
    """Assemble the averages matrix for a candidate break set.

    ``*_layout`` selects, per block, whether the column enters once over the
    whole sample (``"pooled"``), once per regime with zeros outside it
    (``"regime"``), or not at all (``"none"``). The estimation algorithm switches
    layouts between its steps.
    """
    for lay in (x_layout, w_layout, observed_layout):
        if lay not in _LAYOUTS:
            raise ValueError(f"unknown layout {lay!r}; choose from {_LAYOUTS}")
    t = data.n_periods
    if breaks.n_periods != t:
        raise ValueError(f"break set is for T={breaks.n_periods}, panel has T={t}")
    reg = breaks.regime_index()
    k1 = breaks.k + 1
    blocks, names = [], []

    def add(mat, labels, layout):
        if layout == "none" or mat.shape[1] == 0:
            return
        if layout == "pooled":
            blocks.append(mat)
            names.extend(labels)
        else:
            for j in range(k1):
                blocks.append(np.where((reg == j)[:, None], mat, 0.0))
                names.extend(f"{lab}[r{j + 1}]" for lab in labels)

    add(data.x.mean(axis=0), [f"mean({n})" for n in data.x_names], x_layout)
    add(data.w.mean(axis=0), [f"mean({n})" for n in data.w_names], w_layout)
    if include_observed:
        add(data.observed_factors, list(data.factor_names), observed_layout)
    if breaking_constant:
        add(np.ones((t, 1)), ["const"], "regime")
    z = np.concatenate(blocks, axis=1) if blocks else np.zeros((t, 0))
    return AverageBlock(z, tuple(names), breaks)


@dataclass(frozen=True)
class RankDiagnostic:
    rank: int
    q: int
    rcond: float
    factors_needed: int | None = None

    @property
    def deficient(self) -> bool:
        return self.rank < self.q

    @property
    def message(self) -> str:
        msg = f"rank(Z_bar) = {self.rank} of q = {self.q} columns (rcond {self.rcond:.3g})"
        if self.factors_needed is not None and self.factors_needed > self.rank:
            msg += f"; {self.factors_needed} factor columns assumed exceed the rank"
        return msg

    def to_dict(self) -> dict:
        return {"rank": self.rank, "q": self.q, "rcond": self.rcond,
                "deficient": self.deficient}


def _scaled_svd(z: np.ndarray):
    norms = np.linalg.norm(z, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    u, s, vt = np.linalg.svd(z / norms, full_matrices=False)
    return u, s, vt


def _rank_and_rcond(s: np.ndarray, shape) -> tuple[int, float]:
    if s.size == 0:
        return 0, 1.0
    tol = max(shape) * np.finfo(float).eps * s[0]
    rank = int(np.sum(s > tol))
    rcond = float((s[-1] / s[0]) ** 2) if s[0] > 0 else 0.0
    if min(shape) < shape[1]:  # more columns than rows: Z'Z singular
        rcond = 0.0
    return rank, rcond


def check_rank(avg: AverageBlock, m_assumed: int | None = None) -> RankDiagnostic:
    """Numerical column rank of the averages; warns when it falls short of q."""
    z = avg.z_bar
    if z.shape[1] == 0:
        return RankDiagnostic(0, 0, 1.0)
    _, s, _ = _scaled_svd(z)
    rank, rcond = _rank_and_rcond(s, z.shape)
    needed = None
    if m_assumed is not None:
        pooled_x = any(c.startswith("mean(") and "[r" not in c for c in avg.columns)
        needed = (avg.breaks.k + 1 + int(pooled_x)) * m_assumed
    diag = RankDiagnostic(rank, z.shape[1], rcond, needed)
    if diag.deficient or (needed is not None and needed > rank):
        warnings.warn(diag.message, RankWarning, stacklevel=2)
    return diag


class Projector:
    """Orthogonal-basis form of ``M_Z``; applies ``A - Q Q' A`` along the time axis."""

    def __init__(self, z: np.ndarray, columns=None, on_singular: str = "raise"):
        z = np.asarray(z, dtype=float)
        self.n_periods, self.q = z.shape
        self.columns = tuple(columns) if columns is not None else tuple(
            f"z{j + 1}" for j in range(self.q))
        if self.q == 0:
            self.basis = np.zeros((self.n_periods, 0))
            self.rank, self.rcond = 0, 1.0
            return
        u, s, vt = _scaled_svd(z)
        self.rank, self.rcond = _rank_and_rcond(s, z.shape)
        if self.rcond < RCOND_ERROR and on_singular == "raise":
            raise IllConditionedError(
                f"averages matrix is ill-conditioned (rcond {self.rcond:.3g} < "
                f"{RCOND_ERROR:g}); offending columns: {self._offending(s, vt)}"
            )
        if RCOND_ERROR <= self.rcond < RCOND_WARN:
            warnings.warn(
                f"averages matrix poorly conditioned (rcond {self.rcond:.3g})",
                ConditioningWarning, stacklevel=2,
            )
        self.basis = u[:, : self.rank]

    def _offending(self, s, vt) -> list[str]:
        if s.shape[0] < self.q:
            return list(self.columns)
        small = s < np.sqrt(RCOND_ERROR) * s[0]
        weight = np.abs(vt[small]).max(axis=0) if small.any() else np.abs(vt[-1])
        return [self.columns[j] for j in np.flatnonzero(weight > 0.1)]

    def matrix(self) -> np.ndarray:
        return np.eye(self.n_periods) - self.basis @ self.basis.T

    def apply(self, a: np.ndarray) -> np.ndarray:
        """Defactor an N x T or N x T x p array (time on axis 1)."""
        a = np.asarray(a, dtype=float)
        q = self.basis
        if a.ndim == 2:
            return a - (a @ q) @ q.T
        at = np.ascontiguousarray(a.transpose(0, 2, 1))
        return a - ((at @ q) @ q.T).transpose(0, 2, 1)

    def apply_rows(self, a: np.ndarray) -> np.ndarray:
        """Defactor a T-rowed vector or matrix."""
        a = np.asarray(a, dtype=float)
        return a - self.basis @ (self.basis.T @ a)


def explicit_projector(z: np.ndarray) -> np.ndarray:
    """``I - Z (Z'Z)^{-1} Z'`` by direct inversion; reference route for well-conditioned Z."""
    z = np.asarray(z, dtype=float)
    return np.eye(z.shape[0]) - z @ np.linalg.solve(z.T @ z, z.T)


@dataclass(frozen=True)
class DefactoredPanel:
    """Projected data; ``w_t`` is regime-expanded to (k+1) p_w columns."""

    y_t: np.ndarray
    x_t: np.ndarray
    w_t: np.ndarray
    breaks: BreakSet
    rank: RankDiagnostic
    p_w: int
    x_expanded: bool = False
    x_raw_ss: np.ndarray | None = None
    w_raw_ss: np.ndarray | None = None

    @property
    def n_units(self) -> int:
        return self.y_t.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y_t.shape[1]


def project(
    data: PanelDataset,
    avg: AverageBlock,
    breaks: BreakSet | None = None,
    *,
    expand_x: bool = False,
    on_singular: str = "raise",
) -> DefactoredPanel:
    """Apply ``M_Zbar`` to y, X and the regime-expanded W of every unit."""
    breaks = avg.breaks if breaks is None else breaks
    proj = Projector(avg.z_bar, avg.columns, on_singular=on_singular)
    x = regime_expand(data.x, breaks) if expand_x else data.x
    w = regime_expand(data.w, breaks)
    diag = RankDiagnostic(proj.rank, proj.q, proj.rcond)
    return DefactoredPanel(
        y_t=proj.apply(data.y),
        x_t=proj.apply(x) if x.shape[2] else x.copy(),
        w_t=proj.apply(w),
        breaks=breaks,
        rank=diag,
        p_w=data.p_w,
        x_expanded=expand_x,
        x_raw_ss=np.einsum("ntp,ntp->p", x, x),
        w_raw_ss=np.einsum("ntp,ntp->p", w, w),
    )


def dump_averages(avg: AverageBlock, path) -> None:
    """Debug dump of the averages matrix with a rank-diagnostic header line."""
    import pandas as pd

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankWarning)
        diag = check_rank(avg)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {diag.message}\n")
        pd.DataFrame(avg.z_bar, columns=list(avg.columns)).to_csv(
            fh, index_label="period", lineterminator="\n")
