"""Bartlett-kernel long-run covariance of the breaking coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..estimator import FitResult, check_gram
from ..exceptions import NumericalError, SingularGramError

PSD_RTOL = 1e-10


def default_bandwidth(n_periods: int) -> int:
    """Newey-West rule ``floor(4 (T / 100)^(2/9))``."""
    return int(math.floor(4.0 * (n_periods / 100.0) ** (2.0 / 9.0)))


@dataclass(frozen=True)
class HacSpec:
    """Bandwidth for the Bartlett kernel; ``None`` selects the Newey-West rule."""

    bandwidth: int | None = None

    def __post_init__(self):
        if self.bandwidth is not None and int(self.bandwidth) < 0:
            raise ValueError(f"bandwidth must be nonnegative, got {self.bandwidth}")

    def resolve(self, n_periods: int) -> int:
        lag = default_bandwidth(n_periods) if self.bandwidth is None else int(self.bandwidth)
        if lag >= n_periods:
            raise ValueError(f"bandwidth L={lag} must be below T={n_periods}")
        return lag

    def weights(self, n_periods: int) -> np.ndarray:
        lag = self.resolve(n_periods)
        return 1.0 - np.arange(lag + 1) / (lag + 1.0)


def bartlett_long_run(scores: np.ndarray, lag: int, norm: float) -> np.ndarray:
    """``Lambda_0 + sum_l (1 - l/(L+1)) (Lambda_l + Lambda_l')`` for N x T x d scores."""
    n, t, d = scores.shape
    flat = scores.reshape(n * t, d)
    phi = flat.T @ flat / norm
    for lag_l in range(1, min(lag, t - 1) + 1):
        a = scores[:, lag_l:].reshape(-1, d)
        b = scores[:, : t - lag_l].reshape(-1, d)
        lam = a.T @ b / norm
        phi += (1.0 - lag_l / (lag + 1.0)) * (lam + lam.T)
    return 0.5 * (phi + phi.T)


def _assert_psd(mat: np.ndarray, what: str) -> None:
    if mat.size == 0:
        return
    ev = np.linalg.eigvalsh(mat)
    if ev[0] < -PSD_RTOL * max(abs(ev[-1]), 1e-300):
        raise NumericalError(
            f"{what} is not positive semidefinite (min eigenvalue {ev[0]:.3g}); "
            "the Bartlett weighting guarantees this, so the inputs are inconsistent"
        )


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    """Sandwich pieces for the stacked regime coefficients.

    ``omega`` and ``phi`` are ``(k+1) p_w`` square and normalised by NT.
    ``omega_regime[j]`` and ``phi_regime[j]`` are p_w square, built from the
    regime-j block of the partialled regressors on the periods of regime j and
    normalised by ``N * T_j``.
    """

    omega: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    omega_regime: tuple
    phi_regime: tuple
    bandwidth: int

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "omega": self.omega.tolist(),
            "phi": self.phi.tolist(),
            "v": self.v.tolist(),
        }


def hac_covariance(fit: FitResult, spec: HacSpec | None = None) -> CovarianceEstimate:
    """HAC estimate of the asymptotic covariance of ``sqrt(NT) (delta_hat - delta)``."""
    spec = spec or HacSpec()
    n, t = fit.n_units, fit.n_periods
    lag = spec.resolve(t)
    wc = fit.checked_w
    omega = np.einsum("ntd,nte->de", wc, wc) / (n * t)
    try:
        check_gram(omega, "Omega")
    except SingularGramError as exc:
        raise SingularGramError(
            f"{exc}; the breaking regressors violate the non-collinearity condition"
        ) from None
    scores = fit.residuals[:, :, None] * wc
    phi = bartlett_long_run(scores, lag, n * t)
    _assert_psd(phi, "Phi")
    oinv = np.linalg.inv(omega)
    v = oinv @ phi @ oinv
    v = 0.5 * (v + v.T)

    p = fit.p_w
    om_j, ph_j = [], []
    for j, (lo, hi) in enumerate(fit.breaks.regimes):
        blk = wc[:, lo - 1:hi, j * p:(j + 1) * p]
        tj = hi - lo + 1
        om_j.append(np.einsum("ntd,nte->de", blk, blk) / (n * tj))
        s = fit.residuals[:, lo - 1:hi, None] * blk
        pj = bartlett_long_run(s, lag, n * tj)
        _assert_psd(pj, f"Phi for regime {j + 1}")
        ph_j.append(pj)
    return CovarianceEstimate(omega, phi, v, tuple(om_j), tuple(ph_j), lag)
