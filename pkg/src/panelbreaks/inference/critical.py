"""Simulated critical values for the sup-type break tests.

Under the null each F statistic converges to the supremum, over trimmed break
fractions, of a normalised sum of squared Brownian-bridge contrasts. The
functional is maximised on a grid by a compiled max-plus recursion; quantiles
are assembled in a fixed chunk order so results depend only on
``(seed, reps, grid)``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .. import __version__
from .._kernels import supq_chunk
from ..exceptions import CriticalValueMissing, InputError
from ..panel import max_breaks

LEVELS = (0.10, 0.05, 0.025, 0.01)
KINDS = ("supF", "UDmax", "WDmax", "seqF")
CHUNK = 1000
SECTIONS = 10
DEFAULT_SEED = 20180401
TABLE_ENV = "PANELBREAKS_CV_TABLE"
_SUPQ1_GRID = tuple(float(v) for v in np.geomspace(0.5, 1e-4, 25))


def _ekey(eps: float) -> float:
    return round(float(eps), 6)


def _lkey(level: float) -> float:
    return float(f"{float(level):.12g}")


def seq_level(alpha: float, k: int) -> float:
    """Per-regime level whose (k+1)-fold product of acceptances has size ``alpha``."""
    return 1.0 - (1.0 - alpha) ** (1.0 / (k + 1))


def grid_gap(epsilon: float, grid: int) -> int:
    return max(1, math.ceil(round(epsilon * grid, 9)))


def simulate_sup_q(p_w: int, epsilon: float, k_max: int, *, reps: int = 100_000,
                   grid: int = 2000, seed: int = DEFAULT_SEED, threads: int = 1) -> np.ndarray:
    """Draw ``reps`` vectors ``(sup Q(1), ..., sup Q(k_max))``; shape (reps, k_max).

    Chunk ``c`` uses the stream ``SeedSequence([seed, p_w, 1e6 * epsilon, c])``,
    so the output is identical for any ``threads``.
    """
    if k_max < 1:
        raise InputError("k_max must be at least 1")
    if k_max > max_breaks(epsilon):
        raise InputError(
            f"k_max={k_max} exceeds the maximum of {max_breaks(epsilon)} breaks for "
            f"epsilon={epsilon}"
        )
    m = grid_gap(epsilon, grid)
    n_chunks = -(-reps // CHUNK)
    ekey = int(round(epsilon * 1e6))
    scale = 1.0 / math.sqrt(grid)

    def run(c: int) -> np.ndarray:
        n = min(CHUNK, reps - c * CHUNK)
        rng = np.random.default_rng(np.random.SeedSequence([seed, p_w, ekey, c]))
        inc = rng.standard_normal((n, p_w, grid))
        bt = np.zeros((n, p_w, grid + 1), dtype=np.float32)
        bt[:, :, 1:] = np.cumsum(inc, axis=2) * scale
        out = np.empty((n, k_max))
        supq_chunk(bt, m, k_max, out)
        return out

    if threads <= 1:
        parts = [run(c) for c in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    return np.concatenate(parts, axis=0)


def _quantile_se(sample: np.ndarray, level: float) -> tuple[float, float]:
    q = 1.0 - level
    value = float(np.quantile(sample, q))
    sections = np.array_split(sample, SECTIONS)
    sq = np.array([np.quantile(s, q) for s in sections])
    return value, float(sq.std(ddof=1) / math.sqrt(SECTIONS))


@dataclass
class CriticalValueTable:
    """Critical values keyed by ``(kind, k, p_w, epsilon, level)``.

    ``k`` is the number of breaks for supF, the maximum number for UDmax and
    WDmax, and the number under the null for seqF. Every value carries a
    sectioning standard error.
    """

    entries: dict = field(default_factory=dict)
    provenance: str = "simulated"
    meta: dict = field(default_factory=dict)

    def add(self, kind, k, p_w, epsilon, level, value, se=float("nan")):
        if kind not in KINDS:
            raise InputError(f"unknown test kind {kind!r}")
        self.entries[(kind, int(k), int(p_w), _ekey(epsilon), _lkey(level))] = (
            float(value), float(se))

    def has(self, kind, k, p_w, epsilon, level) -> bool:
        return (kind, int(k), int(p_w), _ekey(epsilon), _lkey(level)) in self.entries

    def get(self, kind: str, k: int, p_w: int, epsilon: float, level: float) -> float:
        key = (kind, int(k), int(p_w), _ekey(epsilon), _lkey(level))
        try:
            return self.entries[key][0]
        except KeyError:
            raise CriticalValueMissing(
                f"no {kind} critical value for k={k}, p_w={p_w}, epsilon={epsilon}, "
                f"level={level}; generate one with simulate_critical_values "
                "(CLI: cv simulate, or --cv simulate)"
            ) from None

    def se(self, kind, k, p_w, epsilon, level) -> float:
        self.get(kind, k, p_w, epsilon, level)
        return self.entries[(kind, int(k), int(p_w), _ekey(epsilon), _lkey(level))][1]

    def levels(self, kind, k, p_w, epsilon) -> list[float]:
        return sorted(key[4] for key in self.entries
                      if key[:4] == (kind, int(k), int(p_w), _ekey(epsilon)))

    def standard_levels(self, kind, k, p_w, epsilon) -> dict:
        """Values at the conventional levels that are present."""
        return {lv: self.get(kind, k, p_w, epsilon, lv) for lv in LEVELS
                if self.has(kind, k, p_w, epsilon, lv)}

    def supq1_quantile(self, p_w: int, epsilon: float, level: float) -> float:
        """Upper-``level`` quantile of sup Q(1); log-level interpolation between stored levels."""
        if self.has("supF", 1, p_w, epsilon, level):
            return self.get("supF", 1, p_w, epsilon, level)
        lv = np.array(self.levels("supF", 1, p_w, epsilon))
        if lv.size < 2 or not lv[0] <= level <= lv[-1]:
            raise CriticalValueMissing(
                f"sup Q(1) quantile at level {level:.3g} outside the stored range for "
                f"p_w={p_w}, epsilon={epsilon}; simulate a table covering it"
            )
        vals = np.array([self.get("supF", 1, p_w, epsilon, x) for x in lv])
        return float(np.interp(np.log(level), np.log(lv), vals))

    def seq_critical(self, k: int, p_w: int, epsilon: float, alpha: float) -> float:
        if self.has("seqF", k, p_w, epsilon, alpha):
            return self.get("seqF", k, p_w, epsilon, alpha)
        return self.supq1_quantile(p_w, epsilon, seq_level(alpha, k))

    def merge(self, other: "CriticalValueTable") -> "CriticalValueTable":
        out = CriticalValueTable(dict(self.entries), self.provenance, dict(self.meta))
        out.entries.update(other.entries)
        return out

    def provenance_dict(self) -> dict:
        return {"source": self.provenance, **self.meta}

    def to_csv(self, dest=None) -> str | None:
        buf = io.StringIO()
        buf.write("# panelbreaks critical value table\n")
        for key in sorted(self.meta):
            buf.write(f"# {key}={self.meta[key]}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["kind", "k", "p_w", "epsilon", "level", "value", "se"])
        for key in sorted(self.entries, key=lambda k: (KINDS.index(k[0]),) + k[1:]):
            v, s = self.entries[key]
            wr.writerow([key[0], key[1], key[2], f"{key[3]:g}", f"{key[4]:.12g}",
                         f"{v:.6f}", f"{s:.6f}"])
        text = buf.getvalue()
        if dest is None:
            return text
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, source, provenance: str = "embedded") -> "CriticalValueTable":
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        meta, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
            elif line.strip():
                rows.append(line)
        table = cls(provenance=provenance, meta=meta)
        for rec in csv.DictReader(rows):
            table.add(rec["kind"], int(rec["k"]), int(rec["p_w"]), float(rec["epsilon"]),
                      float(rec["level"]), float(rec["value"]), float(rec["se"]))
        return table


_EMBEDDED: CriticalValueTable | None = None


def embedded_table() -> CriticalValueTable:
    """Table shipped with the package, or the file named by ``PANELBREAKS_CV_TABLE``."""
    global _EMBEDDED
    path = os.environ.get(TABLE_ENV)
    if path:
        return CriticalValueTable.from_csv(path, provenance=f"file:{path}")
    if _EMBEDDED is None:
        res = resources.files("panelbreaks").joinpath("data/critical_values.csv")
        if not res.is_file():
            _EMBEDDED = CriticalValueTable(provenance="embedded", meta={"missing": "true"})
        else:
            with res.open("r", encoding="utf-8") as fh:
                _EMBEDDED = CriticalValueTable.from_csv(fh, provenance="embedded")
    return _EMBEDDED


def table_from_draws(draws: np.ndarray, p_w: int, epsilon: float,
                     levels=LEVELS, table: CriticalValueTable | None = None) -> CriticalValueTable:
    """All entries for one ``(p_w, epsilon)`` cell from a (reps, k_max) draw matrix."""
    table = table if table is not None else CriticalValueTable()
    k_max = draws.shape[1]
    levels = tuple(levels)
    seq_levels = {seq_level(a, k) for a in levels for k in range(k_max + 1)}
    for k in range(1, k_max + 1):
        lv = set(levels) | (seq_levels | set(_SUPQ1_GRID) if k == 1 else set())
        for level in sorted(lv):
            table.add("supF", k, p_w, epsilon, level, *_quantile_se(draws[:, k - 1], level))
    for kk in range(1, k_max + 1):
        ud = draws[:, :kk].max(axis=1)
        for level in levels:
            table.add("UDmax", kk, p_w, epsilon, level, *_quantile_se(ud, level))
            c = np.array([table.get("supF", k, p_w, epsilon, level) for k in range(1, kk + 1)])
            wd = (draws[:, :kk] * (c[0] / c)).max(axis=1)
            table.add("WDmax", kk, p_w, epsilon, level, *_quantile_se(wd, level))
    for k in range(k_max + 1):
        for level in levels:
            lv = seq_level(level, k)
            key = ("supF", 1, p_w, _ekey(epsilon), _lkey(lv))
            table.add("seqF", k, p_w, epsilon, level, *table.entries[key])
    return table


def simulate_critical_values(kind: str, k: int, p_w: int, epsilon: float, *,
                             grid: int = 2000, reps: int = 100_000, seed: int = DEFAULT_SEED,
                             levels=LEVELS, threads: int = 1) -> CriticalValueTable:
    """Simulate the table cell needed for one test.

    supF, UDmax and WDmax draw sup Q(1..k); seqF needs only sup Q(1) and gets
    entries for ``0..k`` breaks under the null.
    """
    if kind not in KINDS:
        raise InputError(f"unknown test kind {kind!r}; choose from {KINDS}")
    k_sim = 1 if kind == "seqF" else k
    draws = simulate_sup_q(p_w, epsilon, k_sim, reps=reps, grid=grid, seed=seed,
                           threads=threads)
    table = CriticalValueTable(provenance="simulated", meta=_meta(seed, reps, grid))
    table_from_draws(draws, p_w, epsilon, levels, table)
    if kind == "seqF" and k > 1:
        for kk in range(2, k + 1):
            for level in levels:
                lv = seq_level(level, kk)
                table.add("supF", 1, p_w, epsilon, lv, *_quantile_se(draws[:, 0], lv))
                table.add("seqF", kk, p_w, epsilon, level,
                          *table.entries[("supF", 1, p_w, _ekey(epsilon), _lkey(lv))])
    return table


def _meta(seed, reps, grid, dated: bool = False) -> dict:
    meta = {"seed": seed, "reps": reps, "grid": grid, "sections": SECTIONS,
            "version": __version__}
    if dated:
        meta["generated"] = _dt.date.today().isoformat()
    return meta


def build_table(p_ws=(1, 2, 3, 4, 5), epsilons=(0.05, 0.10, 0.15, 0.20, 0.25), *,
                k_cap: int = 9, reps: int = 100_000, grid: int = 2000,
                seed: int = DEFAULT_SEED, threads: int = 1, progress=None) -> CriticalValueTable:
    """Full grid of cells, ``k_max = min(k_cap, max_breaks(epsilon))`` per cell."""
    table = CriticalValueTable(provenance="simulated", meta=_meta(seed, reps, grid, dated=True))
    for p_w in p_ws:
        for eps in epsilons:
            k_max = min(k_cap, max_breaks(eps))
            draws = simulate_sup_q(p_w, eps, k_max, reps=reps, grid=grid, seed=seed,
                                   threads=threads)
            table_from_draws(draws, p_w, eps, LEVELS, table)
            if progress is not None:
                progress(p_w, eps)
    return table
