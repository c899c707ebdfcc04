"""Synthetic panels with interactive effects and Monte Carlo drivers.

Each unit draws from its own Philox stream keyed by ``(seed, replication, unit)``
and the common series from a stream keyed by ``(seed, replication)``, so a panel
is reproducible regardless of scheduling and its first N units do not depend on
how many more are drawn.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np

from .estimator import FitOptions
from .panel import BreakSet, PanelDataset, TrimmingSpec

_COMMON, _UNIT = 0, 1
_BURN = 50


def _stream(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def _ar1(rng: np.random.Generator, shape: tuple, rho: float) -> np.ndarray:
    """Unit-variance stationary AR(1) along axis 0 with a burn-in."""
    e = rng.standard_normal((shape[0] + _BURN,) + tuple(shape[1:]))
    if rho == 0.0:
        return e[_BURN:]
    out = np.empty_like(e)
    out[0] = e[0]
    c = math.sqrt(1.0 - rho * rho)
    for t in range(1, e.shape[0]):
        out[t] = rho * out[t - 1] + c * e[t]
    return out[_BURN:]


def _default_loading_mean(m: int, p: int) -> np.ndarray:
    """Full-rank m x p mean loadings: ones on the diagonal, 0.5 elsewhere."""
    g = np.full((m, p), 0.5)
    g[np.arange(min(m, p)), np.arange(min(m, p))] = 1.0
    return g


@dataclass(frozen=True)
class DgpSpec:
    """Data generating process ``y = x'beta + w'delta_j + gamma_i'f_t + e``.

    Regressors load on the same factors, ``x = Gamma_x,i' f_t + u_x`` and
    ``w = Gamma_w,i' f_t + u_w``. Loadings are mean plus ``loading_sd`` times
    standard normal noise. Errors are AR(1) with unit-variance innovations
    scaled by ``sigma``; ``hetero`` spreads the unit scales uniformly over
    ``sigma * [1, 1 + hetero]``.
    """

    n_units: int = 100
    n_periods: int = 50
    p_x: int = 0
    p_w: int = 2
    n_factors: int = 2
    breaks: tuple = ()
    beta: tuple = ()
    deltas: tuple | None = None
    epsilon: float = 0.15
    loading_sd: float = 0.5
    gamma_mean: tuple | None = None
    gamma_x_mean: tuple | None = None
    gamma_w_mean: tuple | None = None
    factor: str = "ar1"
    factor_rho: float = 0.5
    sigma: float = 1.0
    rho: float = 0.0
    sigma_u: float = 1.0
    rho_u: float = 0.0
    hetero: float = 0.0
    n_observed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.deltas is None:
            deltas = np.ones((len(self.breaks) + 1, self.p_w))
        else:
            deltas = np.asarray(self.deltas, dtype=float)
        if deltas.ndim == 1:
            deltas = deltas[None, :]
        object.__setattr__(self, "deltas", tuple(tuple(float(v) for v in r) for r in deltas))
        object.__setattr__(self, "breaks", tuple(int(b) for b in self.breaks))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta)
                           or tuple([1.0] * self.p_x))
        if deltas.shape != (len(self.breaks) + 1, self.p_w):
            raise ValueError(f"deltas must be (k+1) x p_w = {(len(self.breaks) + 1, self.p_w)}")
        if len(self.beta) != self.p_x:
            raise ValueError(f"beta must have p_x={self.p_x} entries")
        if self.n_factors > self.p_w or (self.p_x and self.n_factors > self.p_x):
            raise ValueError("the rank condition needs n_factors <= p_w (and <= p_x when p_x > 0)")
        if self.factor not in ("ar1", "constant"):
            raise ValueError("factor must be 'ar1' or 'constant'")
        bs = BreakSet(self.breaks, self.n_periods)
        if not TrimmingSpec(self.epsilon).is_admissible(bs):
            raise ValueError(f"true breaks {self.breaks} not admissible at epsilon={self.epsilon}")

    @property
    def k(self) -> int:
        return len(self.breaks)

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        return cls(**{k: (tuple(map(tuple, v)) if k == "deltas" else
                          tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class Truth:
    """Quantities the estimators must not see."""

    breaks: BreakSet
    beta: np.ndarray
    deltas: np.ndarray
    factors: np.ndarray
    gamma: np.ndarray


def generate(spec: DgpSpec, replication: int = 0) -> tuple[PanelDataset, Truth]:
    """Draw one panel and its truth record."""
    n, t, m = spec.n_units, spec.n_periods, spec.n_factors
    px, pw, pd = spec.p_x, spec.p_w, spec.n_observed
    crng = _stream(spec.seed, replication, _COMMON)
    if spec.factor == "constant":
        f = np.ones((t, m))
    else:
        f = _ar1(crng, (t, m), spec.factor_rho)
    obs = _ar1(crng, (t, pd), spec.factor_rho) if pd else np.zeros((t, 0))
    g_mean = np.ones(m) if spec.gamma_mean is None else np.asarray(spec.gamma_mean, float)
    gx_mean = (_default_loading_mean(m, px) if spec.gamma_x_mean is None
               else np.asarray(spec.gamma_x_mean, float).reshape(m, px))
    gw_mean = (_default_loading_mean(m, pw) if spec.gamma_w_mean is None
               else np.asarray(spec.gamma_w_mean, float).reshape(m, pw))
    deltas = np.asarray(spec.deltas)
    beta = np.asarray(spec.beta)
    reg = BreakSet(spec.breaks, t).regime_index()
    dt = deltas[reg]  # T x p_w

    y = np.empty((n, t))
    x = np.empty((n, t, px))
    w = np.empty((n, t, pw))
    gam = np.empty((n, m))
    for i in range(n):
        rng = _stream(spec.seed, replication, _UNIT, i)
        gi = g_mean + spec.loading_sd * rng.standard_normal(m)
        gxi = gx_mean + spec.loading_sd * rng.standard_normal((m, px))
        gwi = gw_mean + spec.loading_sd * rng.standard_normal((m, pw))
        ki = rng.standard_normal(pd)
        scale = spec.sigma * (1.0 + spec.hetero * rng.random())
        e = scale * _ar1(rng, (t,), spec.rho)
        ux = spec.sigma_u * _ar1(rng, (t, px), spec.rho_u)
        uw = spec.sigma_u * _ar1(rng, (t, pw), spec.rho_u)
        x[i] = f @ gxi + ux
        w[i] = f @ gwi + uw
        y[i] = x[i] @ beta + np.einsum("tp,tp->t", w[i], dt) + f @ gi + obs @ ki + e
        gam[i] = gi
    data = PanelDataset(y, x, w, obs)
    truth = Truth(BreakSet(spec.breaks, t), beta, deltas, f, gam)
    return data, truth


@dataclass(frozen=True)
class ToolboxConfig:
    """Estimator and test settings for an experiment.

    ``test`` picks the statistic for size and power runs: ``supF`` (k breaks),
    ``WDmax`` (up to ``k_max``), ``seqF`` (k versus k+1) or ``F_known`` (at
    the true dates).
    """

    test: str = "supF"
    k: int = 1
    k_max: int = 3
    epsilon: float = 0.15
    level: float = 0.05
    bandwidth: int | None = None
    weights: str = "level"
    k_cap: int | None = None
    ci_level: float = 0.95
    options: FitOptions = field(default_factory=FitOptions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["options"] = self.options.to_dict()
        return d


@dataclass(frozen=True)
class McReport:
    """Aggregated Monte Carlo outcome; ``rate`` is over replications that ran."""

    kind: str
    reps: int
    rate: float
    se: float
    failures: int
    outcomes: list
    config: dict
    extra: dict = field(default_factory=dict)

    @property
    def failure_rate(self) -> float:
        return self.failures / self.reps

    def to_dict(self) -> dict:
        return {"kind": self.kind, "reps": self.reps, "rate": self.rate, "se": self.se,
                "failures": self.failures, "failure_rate": self.failure_rate,
                "extra": self.extra, "config": self.config, "outcomes": self.outcomes}

    def table(self) -> str:
        lines = [f"experiment  {self.kind}",
                 f"reps        {self.reps} ({self.failures} failed)",
                 f"rate        {self.rate:.4f}  (MC s.e. {self.se:.4f})"]
        lines += [f"{k:<11} {v}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines)


def binary_se(p: float, reps: int) -> float:
    return math.sqrt(p * (1.0 - p) / reps) if reps else float("nan")


def _one(kind: str, spec: DgpSpec, cfg: ToolboxConfig, rep: int, cv) -> dict:
    from .dpsearch import estimate_breaks
    from .estimator import fit_breaks
    from .inference.breaktests import estimate_num_breaks, f_known, seq_f, sup_f, wdmax_f
    from .inference.confidence import break_confidence
    from .inference.hac import HacSpec, hac_covariance

    data, truth = generate(spec, rep)
    hac = HacSpec(cfg.bandwidth)
    trim = TrimmingSpec(cfg.epsilon)
    opts = cfg.options
    try:
        if kind in ("size", "power"):
            if cfg.test == "supF":
                rep_ = sup_f(data, cfg.k, trim, hac, options=opts, level=cfg.level, cv=cv)
            elif cfg.test == "WDmax":
                rep_ = wdmax_f(data, cfg.k_max, trim, hac, options=opts, level=cfg.level,
                               weights=cfg.weights, cv=cv)
            elif cfg.test == "seqF":
                rep_ = seq_f(data, cfg.k, trim, hac, options=opts, level=cfg.level, cv=cv)
            elif cfg.test == "F_known":
                fit = fit_breaks(data, truth.breaks, opts)
                rep_ = f_known(fit, hac_covariance(fit, hac), level=cfg.level)
            else:
                raise ValueError(f"unknown test {cfg.test!r}")
            return {"rep": rep, "ok": True, "hit": rep_.decision,
                    "statistic": rep_.statistic}
        if kind == "hit_rate":
            res = estimate_breaks(data, spec.k, trim, opts)
            err = np.abs(np.array(res.best_breaks.dates) - np.array(truth.breaks.dates))
            return {"rep": rep, "ok": True, "hit": bool(np.all(err == 0)),
                    "abs_error": float(err.mean()), "breaks": list(res.best_breaks.dates)}
        if kind == "khat":
            res = estimate_num_breaks(data, trim, hac, cfg.level, cfg.k_cap, options=opts, cv=cv)
            return {"rep": rep, "ok": True, "hit": res.k_hat == spec.k, "k_hat": res.k_hat}
        if kind == "coverage":
            res = estimate_breaks(data, spec.k, trim, opts)
            ci = break_confidence(res.fit, hac_covariance(res.fit, hac), cfg.ci_level)
            cov = [iv.lo <= d0 <= iv.hi for iv, d0 in zip(ci.intervals, truth.breaks.dates)]
            return {"rep": rep, "ok": True, "hit": bool(all(cov)),
                    "width": float(np.mean([iv.hi - iv.lo for iv in ci.intervals]))}
        raise ValueError(f"unknown experiment kind {kind!r}")
    except (ArithmeticError, ValueError, KeyError, RuntimeError) as exc:
        if isinstance(exc, KeyError) and kind in ("size", "power", "khat"):
            raise
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(kind: str, spec: DgpSpec, config: ToolboxConfig | None = None,
                   reps: int = 1000, *, n_jobs: int = 1, cv=None,
                   first_rep: int = 0) -> McReport:
    """Run ``reps`` replications of ``kind`` and aggregate.

    Kinds: ``size`` and ``power`` (rejection frequency of ``config.test``),
    ``hit_rate`` (all dates exact), ``khat`` (sequential count equals truth),
    ``coverage`` (every true date inside its interval). Per-replication
    failures are recorded and excluded from the rate.
    """
    if kind not in ("size", "power", "hit_rate", "khat", "coverage"):
        raise ValueError(f"unknown experiment kind {kind!r}")
    config = config or ToolboxConfig()
    idx = range(first_rep, first_rep + reps)
    if n_jobs == 1:
        outcomes = [_one(kind, spec, config, r, cv) for r in idx]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(partial(_one, kind, spec, config), idx,
                                     [cv] * len(idx), chunksize=8))
    ok = [o for o in outcomes if o["ok"]]
    hits = sum(bool(o["hit"]) for o in ok)
    rate = hits / len(ok) if ok else float("nan")
    extra = {}
    if kind == "hit_rate" and ok:
        extra["mean_abs_error"] = math.fsum(o["abs_error"] for o in ok) / len(ok)
    if kind == "coverage" and ok:
        extra["mean_width"] = math.fsum(o["width"] for o in ok) / len(ok)
    if kind == "khat" and ok:
        ks = np.array([o["k_hat"] for o in ok])
        extra["k_hat_counts"] = {int(v): int((ks == v).sum()) for v in np.unique(ks)}
    return McReport(kind, reps, rate, binary_se(rate, len(ok)), reps - len(ok), outcomes,
                    {"spec": spec.to_dict(), "toolbox": config.to_dict()}, extra)


def with_units(spec: DgpSpec, n_units: int) -> DgpSpec:
    return replace(spec, n_units=n_units)
