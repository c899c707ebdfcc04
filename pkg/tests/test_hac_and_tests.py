from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelbreaks.estimator import fit_breaks
from panelbreaks.exceptions import TruncationWarning
from panelbreaks.inference.breaktests import (difference_matrix, estimate_num_breaks,
                                              f_known, f_statistic, seq_f, seq_f_statistic,
                                              sup_f, wdmax_f)
from panelbreaks.inference.hac import (HacSpec, bartlett_long_run, default_bandwidth,
                                       hac_covariance)
from panelbreaks.inference.supsearch import FEvaluator, _fast_pieces_dense
from panelbreaks.panel import BreakSet, PanelDataset, TrimmingSpec, enumerate_admissible
from panelbreaks.simlab import DgpSpec, generate

from conftest import random_panel


def _naive_long_run(scores, lag, norm):
    n, t, d = scores.shape
    out = np.zeros((d, d))
    for i in range(n):
        for s in range(t):
            out += np.outer(scores[i, s], scores[i, s])
        for lg in range(1, lag + 1):
            wgt = 1.0 - lg / (lag + 1.0)
            for s in range(lg, t):
                c = np.outer(scores[i, s], scores[i, s - lg])
                out += wgt * (c + c.T)
    return out / norm


def test_bartlett_matches_loop_formula():
    rng = np.random.default_rng(0)
    sc = rng.standard_normal((4, 9, 3))
    for lag in (0, 1, 3, 8):
        np.testing.assert_allclose(bartlett_long_run(sc, lag, 36.0),
                                   _naive_long_run(sc, lag, 36.0), rtol=1e-12, atol=1e-14)


def test_zero_bandwidth_is_contemporaneous_covariance():
    rng = np.random.default_rng(1)
    data = random_panel(rng, 10, 12, p_w=2)
    fit = fit_breaks(data, BreakSet((6,), 12))
    cov = hac_covariance(fit, HacSpec(0))
    s = (fit.residuals[:, :, None] * fit.checked_w).reshape(-1, 4)
    np.testing.assert_array_equal(cov.phi, 0.5 * ((s.T @ s) / 120 + ((s.T @ s) / 120).T))


def test_default_bandwidth_and_limits():
    assert default_bandwidth(100) == 4
    assert default_bandwidth(64) == 3
    with pytest.raises(ValueError):
        HacSpec(12).resolve(12)


def test_homoskedastic_sandwich_collapses_to_classical():
    # long T keeps the leverage spread of the projection, an O(1/T) effect, negligible
    spec = DgpSpec(n_units=400, n_periods=50, p_w=1, n_factors=1, seed=3)
    diffs = []
    for r in range(100):
        data, _ = generate(spec, r)
        fit = fit_breaks(data, BreakSet((), 50))
        cov = hac_covariance(fit, HacSpec(0))
        sigma2 = fit.ssr / fit.residuals.size
        diffs.append(cov.v[0, 0] - sigma2 / cov.omega[0, 0])
    diffs = np.array(diffs)
    assert abs(diffs.mean()) <= 3 * diffs.std(ddof=1) / np.sqrt(diffs.size)


def test_positive_autocorrelation_raises_long_run_variance():
    spec = DgpSpec(n_units=100, n_periods=50, p_w=1, n_factors=1, rho=0.5, rho_u=0.5, seed=4)
    larger = 0
    for r in range(200):
        fit = fit_breaks(generate(spec, r)[0], BreakSet((), 50))
        larger += hac_covariance(fit, HacSpec(4)).v[0, 0] > hac_covariance(fit, HacSpec(0)).v[0, 0]
    assert larger / 200 >= 0.95


def test_f_is_zero_when_regimes_agree():
    rng = np.random.default_rng(5)
    fit = fit_breaks(random_panel(rng, 10, 12, p_w=2), BreakSet((6,), 12))
    cov = hac_covariance(fit)
    same = dataclasses.replace(fit, delta=np.tile(fit.delta[:2], 2))
    assert f_statistic(same, cov) == 0.0


def test_f_known_report_fields():
    rng = np.random.default_rng(6)
    fit = fit_breaks(random_panel(rng, 10, 12, p_w=1), BreakSet((6,), 12))
    rep = f_known(fit, hac_covariance(fit))
    assert rep.details["dfn"] == 1 and rep.details["dfd"] == fit.dof()
    assert 0.0 <= rep.details["p_value"] <= 1.0
    assert rep.critical_values[0.05] > rep.critical_values[0.10]


def test_f_known_size():
    spec = DgpSpec(n_units=100, n_periods=50, p_w=2, n_factors=2, seed=6)
    rej = 0
    for r in range(1000):
        fit = fit_breaks(generate(spec, r)[0], BreakSet((25,), 50))
        rej += f_known(fit, hac_covariance(fit)).decision
    assert 0.03 <= rej / 1000 <= 0.07


def test_segment_cache_matches_full_refit():
    spec = DgpSpec(n_units=60, n_periods=30, p_w=2, n_factors=2, seed=7)
    data, _ = generate(spec, 0)
    for bw in (None, 0, 6):
        ev = FEvaluator(data, HacSpec(bw), None)
        for dates in [(15,), (5, 20), (5, 10, 25), (4, 8, 12, 16)]:
            bs = BreakSet(dates, 30)
            fit = fit_breaks(data, bs)
            full = f_statistic(fit, hac_covariance(fit, HacSpec(bw)))
            assert ev.f(bs) == pytest.approx(full, rel=1e-10)
            np.testing.assert_allclose(ev.pieces(bs)[1],
                                       _fast_pieces_dense(ev.cache, bs, ev.lag)[1],
                                       rtol=1e-10, atol=1e-13)


def test_sup_dominates_every_admissible_set(small_cv):
    data, _ = generate(DgpSpec(n_units=40, n_periods=20, p_w=2, n_factors=2, seed=8), 0)
    trim = TrimmingSpec(0.15)
    for k in (1, 2):
        rep = sup_f(data, k, trim, cv=small_cv)
        for bs in enumerate_admissible(trim, k, 20):
            fit = fit_breaks(data, bs)
            assert rep.statistic >= f_statistic(fit, hac_covariance(fit)) * (1 - 1e-10)


def test_wdmax_with_one_break_is_supf(small_cv):
    data, _ = generate(DgpSpec(n_units=40, n_periods=30, p_w=2, n_factors=2, seed=9), 0)
    a = sup_f(data, 1, 0.15, cv=small_cv)
    b = wdmax_f(data, 1, 0.15, cv=small_cv)
    c = wdmax_f(data, 1, 0.15, cv=small_cv, weights="unit")
    assert a.statistic == b.statistic == c.statistic


def test_seqf_from_zero_is_supf(small_cv):
    data, _ = generate(DgpSpec(n_units=40, n_periods=30, p_w=2, n_factors=2, seed=10), 0)
    a = sup_f(data, 1, 0.15, cv=small_cv)
    b = seq_f(data, 0, 0.15, cv=small_cv)
    assert a.statistic == pytest.approx(b.statistic, rel=1e-12)
    assert a.breaks.dates == b.breaks.dates


def test_supf_power_against_one_break(small_cv):
    spec = DgpSpec(n_units=200, n_periods=50, p_w=2, n_factors=2, breaks=(25,),
                   deltas=((1.0, 1.0), (1.0 + 0.5 / np.sqrt(2), 1.0 + 0.5 / np.sqrt(2))),
                   seed=12)
    rej = [sup_f(generate(spec, r)[0], 1, 0.15, cv=small_cv).decision for r in range(60)]
    assert np.mean(rej) > 0.8


def test_seqf_power_for_second_break(small_cv):
    s = 0.5 / np.sqrt(2)
    spec = DgpSpec(n_units=200, n_periods=50, p_w=2, n_factors=2, breaks=(17, 34),
                   deltas=((1.0, 1.0), (1.0 + s, 1.0 + s), (1.0, 1.0)), seed=13)
    rej = [seq_f(generate(spec, r)[0], 1, 0.15, cv=small_cv).decision for r in range(60)]
    assert np.mean(rej) > 0.8


def test_cap_reached_truncates_with_warning(small_cv):
    spec = DgpSpec(n_units=200, n_periods=30, p_w=2, n_factors=2, breaks=(10, 20),
                   deltas=((0.0, 0.0), (2.0, 2.0), (0.0, 0.0)), seed=14)
    data, _ = generate(spec, 0)
    with pytest.warns(TruncationWarning):
        res = estimate_num_breaks(data, 0.15, k_cap=1, cv=small_cv)
    assert res.k_hat == 1 and res.truncated


def test_sequential_count_on_strong_breaks(small_cv):
    spec = DgpSpec(n_units=200, n_periods=30, p_w=2, n_factors=2, breaks=(10, 20),
                   deltas=((0.0, 0.0), (2.0, 2.0), (0.0, 0.0)), seed=15)
    res = estimate_num_breaks(generate(spec, 0)[0], 0.15, cv=small_cv)
    assert res.k_hat == 2 and res.breaks.dates == (10, 20)
    assert [e["reject"] for e in res.log] == [True, True, False]
    assert [e["added_date"] for e in res.log[:2]] == [10, 20]


def test_seq_statistic_adds_date_inside_its_window():
    data, _ = generate(DgpSpec(n_units=40, n_periods=40, p_w=2, n_factors=2, seed=16), 0)
    stat, regime, date, per = seq_f_statistic(data, BreakSet((20,), 40), 0.15)
    lo, hi = BreakSet((20,), 40).regimes[regime - 1]
    assert lo <= date < hi and stat == max(p["f"] for p in per)


def test_difference_matrix_rows():
    r = difference_matrix(2, 1)
    np.testing.assert_array_equal(r, [[1, -1, 0], [0, 1, -1]])


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(2, 14))
def test_long_run_covariance_is_psd(seed, d, t):
    rng = np.random.default_rng(seed)
    sc = rng.standard_normal((3, t, d)) * rng.uniform(0.01, 10.0, d)
    lag = int(rng.integers(0, t))
    phi = bartlett_long_run(sc, lag, 3.0 * t)
    ev = np.linalg.eigvalsh(phi)
    assert ev[0] >= -1e-10 * max(ev[-1], 1e-300)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-2, 1e2),
       st.floats(-1e2, 1e2))
def test_f_scale_invariance(seed, cy, cw, shift):
    rng = np.random.default_rng(seed)
    data = random_panel(rng, 6, 10, p_w=2)
    bs = BreakSet((5,), 10)
    base = f_statistic(fit := fit_breaks(data, bs), hac_covariance(fit))
    w = data.w * np.array([cw, 1.0])
    scaled = PanelDataset(cy * data.y, data.x, w, data.observed_factors)
    other = fit_breaks(scaled, bs)
    assert f_statistic(other, hac_covariance(other)) == pytest.approx(base, rel=1e-7)
    if abs(cy) > 0:
        moved = PanelDataset(data.y + shift * data.w.mean(axis=0)[None, :, 0], data.x,
                             data.w, data.observed_factors)
        m = fit_breaks(moved, bs)
        # adding a multiple of an average column leaves the defactored data unchanged
        assert f_statistic(m, hac_covariance(m)) == pytest.approx(base, rel=1e-7)


def test_sup_with_ssr_search_reports_route(small_cv):
    data, _ = generate(DgpSpec(n_units=40, n_periods=30, p_w=2, n_factors=2, seed=17), 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = sup_f(data, 1, 0.15, cv=small_cv, search="ssr")
    assert rep.details["search"] == "ssr"
