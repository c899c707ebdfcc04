from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from panelbreaks.estimator import fit_breaks
from panelbreaks.exceptions import InputError, NumericalError
from panelbreaks.inference.confidence import (argmax_quantile, argmax_sample,
                                              argmax_sample_path, break_confidence,
                                              symmetric_argmax_cdf)
from panelbreaks.inference.hac import hac_covariance
from panelbreaks.panel import BreakSet
from panelbreaks.simlab import DgpSpec, generate


def test_symmetric_quantile_matches_closed_form():
    q = argmax_quantile(1.0, 1.0, 0.975)
    assert q == pytest.approx(11.03, abs=0.15)
    assert symmetric_argmax_cdf(q) == pytest.approx(0.975, abs=5e-4)


def test_symmetric_bank_matches_closed_form_cdf():
    s = argmax_sample(1.0, 1.0)
    for x in (-8.0, -2.0, 0.5, 3.0, 10.0):
        assert np.mean(s <= x) == pytest.approx(float(symmetric_argmax_cdf(x)), abs=2e-3)


@pytest.mark.parametrize("xi, sigma2", [(1.0, 1.0), (2.0, 1.5), (0.5, 0.8)])
def test_bank_agrees_with_path_simulation(xi, sigma2):
    path = argmax_sample_path(xi, sigma2, 6000, step=0.02, span=120.0, rng=1)
    bank = argmax_sample(xi, sigma2)
    for p in (0.1, 0.5, 0.9):
        a, b = np.quantile(path, p), np.quantile(bank, p)
        assert a == pytest.approx(b, abs=0.12 * max(1.0, abs(b)))


def test_nonpositive_parameters_rejected():
    with pytest.raises(InputError):
        argmax_sample(0.0, 1.0)


def _fit(n, seed, rep):
    spec = DgpSpec(n_units=n, n_periods=30, p_w=1, n_factors=1, breaks=(15,),
                   deltas=((1.0,), (1.4,)), seed=seed)
    data, _ = generate(spec, rep)
    fit = fit_breaks(data, BreakSet((15,), 30))
    return fit, hac_covariance(fit)


def test_interval_narrows_with_more_units():
    narrower = 0
    for r in range(100):
        small = break_confidence(*_fit(100, 31, r), bank_size=100_000).intervals[0]
        large = break_confidence(*_fit(800, 31, r), bank_size=100_000).intervals[0]
        narrower += (large.hi - large.lo) <= (small.hi - small.lo)
    assert narrower / 100 >= 0.99


def test_zero_change_is_numerical_error():
    fit, cov = _fit(50, 32, 0)
    flat = dataclasses.replace(fit, delta=np.tile(fit.delta[:1], 2))
    with pytest.raises(NumericalError, match="zero"):
        break_confidence(flat, cov)


def test_interval_clamped_to_sample():
    spec = DgpSpec(n_units=20, n_periods=20, p_w=1, n_factors=1, breaks=(3,),
                   deltas=((1.0,), (1.05,)), seed=33)
    data, _ = generate(spec, 0)
    fit = fit_breaks(data, BreakSet((3,), 20))
    iv = break_confidence(fit, hac_covariance(fit), bank_size=100_000).intervals[0]
    assert iv.lo == 1 and iv.hi <= 20
    assert iv.lo <= iv.date <= iv.hi


def test_level_and_break_count_validated():
    fit, cov = _fit(50, 34, 0)
    with pytest.raises(InputError):
        break_confidence(fit, cov, level=1.0)
    spec = DgpSpec(n_units=20, n_periods=20, p_w=1, n_factors=1, seed=35)
    nofit = fit_breaks(generate(spec, 0)[0], BreakSet((), 20))
    with pytest.raises(InputError):
        break_confidence(nofit, hac_covariance(nofit))


def test_intervals_serialise():
    fit, cov = _fit(50, 36, 0)
    d = break_confidence(fit, cov, bank_size=100_000).to_dict()
    assert d["level"] == 0.95 and d["intervals"][0]["date"] == 15
