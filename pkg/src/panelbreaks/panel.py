"""Balanced panel container, long-format CSV ingestion and break-set bookkeeping."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    CapacityError,
    ParseError,
    SchemaError,
    UnbalancedPanelError,
)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced N x T panel.

    Attributes
    ----------
    y : ndarray, shape (N, T)
        Dependent variable.
    x : ndarray, shape (N, T, p_x)
        Regressors with stable coefficients (``p_x`` may be 0).
    w : ndarray, shape (N, T, p_w)
        Regressors with breaking coefficients (``p_w >= 1``).
    observed_factors : ndarray, shape (T, p_d)
        Known common series (``p_d`` may be 0).
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    observed_factors: np.ndarray
    unit_labels: tuple = ()
    period_labels: tuple = ()
    x_names: tuple = ()
    w_names: tuple = ()
    factor_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 2:
            raise SchemaError(f"y must be N x T, got shape {y.shape}")
        n, t = y.shape
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.zeros((n, t, 0))
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 2:
            w = w[:, :, None]
        f = np.asarray(self.observed_factors, dtype=float)
        if f.size == 0:
            f = np.zeros((t, 0))
        elif f.ndim == 1:
            f = f[:, None]
        if x.ndim != 3 or x.shape[:2] != (n, t):
            raise SchemaError(f"x must be N x T x p_x, got {x.shape}")
        if w.ndim != 3 or w.shape[:2] != (n, t):
            raise SchemaError(f"w must be N x T x p_w, got {w.shape}")
        if f.shape[0] != t:
            raise SchemaError(f"observed factors must have T={t} rows, got {f.shape[0]}")
        p_x, p_w = x.shape[2], w.shape[2]
        if p_w < 1:
            raise SchemaError("at least one breaking regressor is required")
        if n < 2:
            raise SchemaError(f"need N >= 2 units, got {n}")
        if t < p_x + 2 * p_w + 2:
            raise SchemaError(
                f"T={t} too short for a one-break model with p_x={p_x}, p_w={p_w}"
            )
        for name, arr in (("y", y), ("x", x), ("w", w), ("observed_factors", f)):
            if not np.all(np.isfinite(arr)):
                raise ParseError(f"non-finite values in {name}")
        set_ = object.__setattr__
        set_(self, "y", _readonly(y))
        set_(self, "x", _readonly(x))
        set_(self, "w", _readonly(w))
        set_(self, "observed_factors", _readonly(f))
        set_(self, "unit_labels", tuple(self.unit_labels) or tuple(range(1, n + 1)))
        set_(self, "period_labels", tuple(self.period_labels) or tuple(range(1, t + 1)))
        set_(self, "x_names", tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(p_x)))
        set_(self, "w_names", tuple(self.w_names) or tuple(f"w{j + 1}" for j in range(p_w)))
        set_(
            self,
            "factor_names",
            tuple(self.factor_names) or tuple(f"f{j + 1}" for j in range(f.shape[1])),
        )

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def p_x(self) -> int:
        return self.x.shape[2]

    @property
    def p_w(self) -> int:
        return self.w.shape[2]

    @property
    def p_d(self) -> int:
        return self.observed_factors.shape[1]

    def select_units(self, idx) -> "PanelDataset":
        idx = np.asarray(idx)
        return PanelDataset(
            self.y[idx], self.x[idx], self.w[idx], self.observed_factors,
            unit_labels=tuple(np.asarray(self.unit_labels, dtype=object)[idx]),
            period_labels=self.period_labels, x_names=self.x_names,
            w_names=self.w_names, factor_names=self.factor_names,
        )

    def with_y(self, y) -> "PanelDataset":
        return PanelDataset(
            y, self.x, self.w, self.observed_factors, self.unit_labels,
            self.period_labels, self.x_names, self.w_names, self.factor_names,
        )

    def equals(self, other: "PanelDataset") -> bool:
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.observed_factors, other.observed_factors)
            and self.unit_labels == other.unit_labels
            and self.period_labels == other.period_labels
            and self.x_names == other.x_names
            and self.w_names == other.w_names
            and self.factor_names == other.factor_names
        )


@dataclass(frozen=True)
class BreakSet:
    """Ordered break dates ``T_1 < ... < T_k`` on the 1..T period index.

    Regime ``j`` (1-based) covers periods ``T_{j-1}+1 .. T_j`` with ``T_0 = 0``
    and ``T_{k+1} = T``.
    """

    dates: tuple
    n_periods: int

    def __post_init__(self):
        dates = tuple(int(d) for d in self.dates)
        object.__setattr__(self, "dates", dates)
        t = int(self.n_periods)
        object.__setattr__(self, "n_periods", t)
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError(f"break dates must be strictly increasing: {dates}")
        if dates and (dates[0] < 1 or dates[-1] > t - 1):
            raise ValueError(f"break dates must lie in [1, {t - 1}]: {dates}")

    @property
    def k(self) -> int:
        return len(self.dates)

    @property
    def bounds(self) -> tuple:
        """``(T_0, T_1, ..., T_k, T_{k+1})``."""
        return (0,) + self.dates + (self.n_periods,)

    @property
    def regimes(self) -> list[tuple[int, int]]:
        """1-based inclusive ``(first, last)`` period of each regime."""
        b = self.bounds
        return [(b[j] + 1, b[j + 1]) for j in range(self.k + 1)]

    def regime_lengths(self) -> np.ndarray:
        return np.diff(self.bounds)

    def regime_index(self) -> np.ndarray:
        """0-based regime of every period, shape (T,)."""
        return np.repeat(np.arange(self.k + 1), self.regime_lengths())

    def fractions(self) -> tuple:
        return tuple(d / self.n_periods for d in self.dates)

    def with_date(self, date: int) -> "BreakSet":
        return BreakSet(tuple(sorted(self.dates + (int(date),))), self.n_periods)

    def __iter__(self):
        return iter(self.dates)

    def __len__(self):
        return self.k


@dataclass(frozen=True)
class TrimmingSpec:
    """Minimum regime length as a fraction ``epsilon`` of T."""

    epsilon: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")

    def min_length(self, n_periods: int) -> int:
        # round first so 0.15 * 100 does not ceil to 16
        return max(1, math.ceil(round(self.epsilon * n_periods, 9)))

    @property
    def max_breaks(self) -> int:
        return max_breaks(self)

    def is_admissible(self, breaks: BreakSet) -> bool:
        h = self.min_length(breaks.n_periods)
        return bool(np.all(breaks.regime_lengths() >= h))


def max_breaks(trim: TrimmingSpec | float) -> int:
    eps = trim.epsilon if isinstance(trim, TrimmingSpec) else float(trim)
    return math.floor(round(1.0 / eps, 9)) - 2


def enumerate_admissible(trim: TrimmingSpec, k: int, n_periods: int) -> Iterator[BreakSet]:
    """Lazily yield every admissible k-break set, in lexicographic order."""
    if k > trim.max_breaks:
        raise CapacityError(
            f"k={k} exceeds the maximum of {trim.max_breaks} breaks for epsilon={trim.epsilon}"
        )
    h = trim.min_length(n_periods)

    def rec(prefix: tuple, last: int, left: int):
        if left == 0:
            if n_periods - last >= h:
                yield BreakSet(prefix, n_periods)
            return
        for d in range(last + h, n_periods - left * h + 1):
            yield from rec(prefix + (d,), d, left - 1)

    return rec((), 0, k)


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for long-format input."""

    unit: str = "unit"
    period: str = "period"
    y: str = "y"
    x: Sequence[str] = ()
    w: Sequence[str] = ()
    factors: Sequence[str] = ()

    def __post_init__(self):
        for name in ("x", "w", "factors"):
            val = getattr(self, name)
            if isinstance(val, str):
                val = [v for v in val.split(",") if v]
            object.__setattr__(self, name, tuple(val))

    @property
    def value_columns(self) -> list[str]:
        return [self.y, *self.x, *self.w]

    def all_columns(self) -> list[str]:
        return [self.unit, self.period, *self.value_columns, *self.factors]


def _sort_labels(labels: pd.Series) -> list:
    uniq = pd.unique(labels)
    num = pd.to_numeric(pd.Series(uniq), errors="coerce")
    if not num.isna().any():
        order = np.argsort(num.to_numpy(), kind="stable")
        return [uniq[i] for i in order]
    try:
        dt = pd.to_datetime(pd.Series(uniq), errors="raise")
        order = np.argsort(dt.to_numpy(), kind="stable")
        return [uniq[i] for i in order]
    except (ValueError, TypeError):
        return sorted(uniq)


def load_panel(source, schema: PanelSchema) -> PanelDataset:
    """Read a long-format CSV (path, text stream, or DataFrame) into a validated panel.

    Rows are sorted by (unit, period) and periods re-indexed 1..T; the original
    identifiers survive as ``unit_labels`` and ``period_labels``.
    """
    if isinstance(source, pd.DataFrame):
        df = source.astype(str)
    else:
        if isinstance(source, (str, os.PathLike)) and not os.path.exists(source):
            raise SchemaError(f"input file not found: {source}")
        try:
            df = pd.read_csv(source, dtype=str, keep_default_na=False)
        except pd.errors.EmptyDataError:
            raise SchemaError("input is empty: expected a header row with columns "
                              + ", ".join(schema.all_columns())) from None
    missing = [c for c in schema.all_columns() if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns {missing}; found {list(df.columns)}")
    if not schema.w:
        raise SchemaError("schema needs at least one breaking regressor (w column)")
    if df.empty:
        raise SchemaError("input has a header but no data rows")

    values = {}
    for col in schema.value_columns + list(schema.factors):
        parsed = pd.to_numeric(df[col].str.strip(), errors="coerce")
        bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=float))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(
                f"non-numeric value {df[col].iloc[row]!r} in column {col!r} "
                f"at data row {row + 1} (unit={df[schema.unit].iloc[row]}, "
                f"period={df[schema.period].iloc[row]})"
            )
        values[col] = parsed.to_numpy(dtype=float)

    units = _sort_labels(df[schema.unit])
    periods = _sort_labels(df[schema.period])
    uidx = pd.Index(units).get_indexer(df[schema.unit])
    tidx = pd.Index(periods).get_indexer(df[schema.period])
    n, t = len(units), len(periods)
    flat = uidx * t + tidx
    dup = pd.Series(flat).duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise SchemaError(
            f"duplicate cell (unit={units[uidx[row]]}, period={periods[tidx[row]]})"
        )
    if len(flat) != n * t:
        present = np.zeros(n * t, dtype=bool)
        present[flat] = True
        cell = int(np.flatnonzero(~present)[0])
        raise UnbalancedPanelError(
            f"unbalanced panel: missing cell (unit={units[cell // t]}, "
            f"period={periods[cell % t]})"
        )

    def grid(col):
        out = np.empty(n * t)
        out[flat] = values[col]
        return out.reshape(n, t)

    y = grid(schema.y)
    x = np.stack([grid(c) for c in schema.x], axis=2) if schema.x else np.zeros((n, t, 0))
    w = np.stack([grid(c) for c in schema.w], axis=2)
    fac = np.zeros((t, len(schema.factors)))
    for j, col in enumerate(schema.factors):
        g = grid(col)
        if not np.all(g == g[:1]):
            bad_t = int(np.flatnonzero(~np.all(g == g[:1], axis=0))[0])
            raise SchemaError(
                f"factor column {col!r} varies within period {periods[bad_t]}"
            )
        fac[:, j] = g[0]
    return PanelDataset(
        y, x, w, fac,
        unit_labels=tuple(units), period_labels=tuple(periods),
        x_names=tuple(schema.x), w_names=tuple(schema.w),
        factor_names=tuple(schema.factors),
    )


def panel_to_frame(data: PanelDataset, schema: PanelSchema | None = None) -> pd.DataFrame:
    schema = schema or PanelSchema(x=data.x_names, w=data.w_names, factors=data.factor_names)
    n, t = data.n_units, data.n_periods
    cols = {
        schema.unit: np.repeat(np.asarray(data.unit_labels, dtype=object), t),
        schema.period: np.tile(np.asarray(data.period_labels, dtype=object), n),
        schema.y: data.y.ravel(),
    }
    for j, c in enumerate(schema.x):
        cols[c] = data.x[:, :, j].ravel()
    for j, c in enumerate(schema.w):
        cols[c] = data.w[:, :, j].ravel()
    for j, c in enumerate(schema.factors):
        cols[c] = np.tile(data.observed_factors[:, j], n)
    return pd.DataFrame(cols)


def write_panel(data: PanelDataset, dest=None, schema: PanelSchema | None = None) -> str | None:
    """Write long-format CSV; returns the text when ``dest`` is None."""
    frame = panel_to_frame(data, schema)
    if dest is None:
        buf = io.StringIO()
        frame.to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue()
    frame.to_csv(dest, index=False, lineterminator="\n")
    return None
