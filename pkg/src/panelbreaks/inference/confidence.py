"""Break-date confidence intervals from the argmax of a two-sided drifted Brownian motion.

The limit process is ``B1(-s) - |s|/2`` on the left and
``sigma B2(s) - xi s/2`` on the right with ``sigma^2 = xi phi2 / phi1``.
Brownian scaling maps the right side to ``(sigma^2/xi) (B(u) - u/2)`` at time
``s = (sigma^2/xi^2) u``, so both sides reduce to one standard process. Its
maximum is Exp(1) and, given the maximum ``m``, the time it is attained is
inverse Gaussian with mean ``2m`` and shape ``m^2``. Sampling these pairs
directly gives the argmax without discretisation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..estimator import FitResult
from ..exceptions import InputError, NumericalError
from .hac import CovarianceEstimate

BANK_SIZE = 1_000_000
BANK_SEED = 97_1997
_BANK: dict = {}


def _bank(size: int = BANK_SIZE, seed: int = BANK_SEED) -> tuple[np.ndarray, ...]:
    key = (size, seed)
    if key not in _BANK:
        rng = np.random.default_rng(np.random.SeedSequence([seed, size]))
        out = []
        for _ in range(2):
            m = rng.exponential(1.0, size)
            tau = rng.wald(2.0 * m, m * m)
            out.extend([m, tau])
        _BANK[key] = tuple(out)
    return _BANK[key]


def argmax_sample(xi: float, sigma2: float, *, size: int = BANK_SIZE,
                  seed: int = BANK_SEED) -> np.ndarray:
    """Draws of ``argmax_s V(s)`` for right-side drift ``xi`` and variance ``sigma2``."""
    if not (xi > 0 and sigma2 > 0):
        raise InputError(f"xi and sigma^2 must be positive, got {xi}, {sigma2}")
    m1, t1, m2, t2 = _bank(size, seed)
    scale_v = sigma2 / xi
    scale_t = sigma2 / xi ** 2
    return np.where(m1 > scale_v * m2, -t1, scale_t * t2)


def argmax_quantile(xi: float, sigma2: float, prob: float, **kw) -> float:
    """``prob`` quantile of the argmax distribution."""
    return float(np.quantile(argmax_sample(xi, sigma2, **kw), prob))


def argmax_sample_path(xi: float, sigma2: float, reps: int, *, step: float = 0.05,
                       span: float = 200.0, rng=None, batch: int = 2000) -> np.ndarray:
    """Argmax of ``V`` on the grid ``[-span, span]`` with mesh ``step`` (discretised route)."""
    rng = np.random.default_rng(rng)
    n = int(round(span / step))
    sig = math.sqrt(sigma2)
    out = np.empty(reps)
    drift_r = xi * step / 2.0
    drift_l = step / 2.0
    sd = math.sqrt(step)
    done = 0
    while done < reps:
        b = min(batch, reps - done)
        left = np.cumsum(sd * rng.standard_normal((b, n)) - drift_l, axis=1)
        right = np.cumsum(sig * sd * rng.standard_normal((b, n)) - drift_r, axis=1)
        il, ir = left.argmax(axis=1), right.argmax(axis=1)
        ml, mr = left[np.arange(b), il], right[np.arange(b), ir]
        res = np.where(mr >= ml, (ir + 1) * step, -(il + 1) * step)
        res[(ml <= 0) & (mr <= 0)] = 0.0
        out[done:done + b] = res
        done += b
    return out


def symmetric_argmax_cdf(x) -> np.ndarray:
    """Closed-form distribution function of the argmax when xi = 1 and sigma^2 = 1."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    phi = stats.norm.cdf
    upper = (1.0 + np.sqrt(ax / (2 * np.pi)) * np.exp(-ax / 8.0)
             - 0.5 * (ax + 5.0) * phi(-np.sqrt(ax) / 2.0)
             + 1.5 * np.exp(ax) * phi(-1.5 * np.sqrt(ax)))
    return np.where(x >= 0, upper, 1.0 - upper)


@dataclass(frozen=True)
class BreakInterval:
    date: int
    lo: int
    hi: int
    xi: float
    phi1: float
    phi2: float
    critical_value: float
    scale: float

    def to_dict(self) -> dict:
        return {"date": self.date, "lo": self.lo, "hi": self.hi, "xi": self.xi,
                "phi1": self.phi1, "phi2": self.phi2,
                "critical_value": self.critical_value, "scale": self.scale}


@dataclass(frozen=True)
class BreakConfidence:
    """Integer confidence intervals for every estimated break date."""

    level: float
    intervals: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"level": self.level, "intervals": [iv.to_dict() for iv in self.intervals]}


def break_confidence(fit: FitResult, cov: CovarianceEstimate, level: float = 0.95, *,
                     bank_size: int = BANK_SIZE) -> BreakConfidence:
    """Confidence intervals ``T_j -/+ (floor(c * scale_j) + 1)`` clamped to ``[1, T]``.

    ``scale_j = D' Phi_j D / (N (D' Omega_j D)^2)`` with ``D`` the estimated
    coefficient change at break j, and ``c`` the ``1 - alpha/2`` quantile of
    the argmax distribution for the estimated ``xi`` and ``phi`` ratios.
    """
    if not 0.0 < level < 1.0:
        raise InputError(f"level must lie in (0, 1), got {level}")
    if fit.k < 1:
        raise InputError("confidence intervals need at least one break")
    alpha = 1.0 - level
    n, t = fit.n_units, fit.n_periods
    out = []
    for j, date in enumerate(fit.breaks.dates):
        d = fit.delta_increments[j]
        if not np.linalg.norm(d) > 1e-12 * max(1.0, np.linalg.norm(fit.delta)):
            raise NumericalError(
                f"coefficient change at break {j + 1} is numerically zero; "
                "the interval scaling is undefined (break too weak to localise)")
        om1 = d @ cov.omega_regime[j] @ d
        om2 = d @ cov.omega_regime[j + 1] @ d
        ph1 = d @ cov.phi_regime[j] @ d
        ph2 = d @ cov.phi_regime[j + 1] @ d
        if not (om1 > 0 and om2 > 0 and ph1 > 0 and ph2 > 0):
            raise NumericalError(f"degenerate regime covariances around break {j + 1}")
        xi = om2 / om1
        phi1, phi2 = ph1 / om1, ph2 / om2
        c = argmax_quantile(xi, xi * phi2 / phi1, 1.0 - alpha / 2.0, size=bank_size)
        scale = ph1 / (n * om1 ** 2)
        half = math.floor(c * scale) + 1
        out.append(BreakInterval(date, max(1, date - half), min(t, date + half),
                                 float(xi), float(phi1), float(phi2), float(c), float(scale)))
    return BreakConfidence(level, tuple(out))
