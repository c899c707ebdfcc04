from __future__ import annotations

import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelbreaks.dpsearch import (brute_force_minimize, build_segment_table, dp_minimize,
                                  estimate_breaks, segment_zbase)
from panelbreaks.estimator import FitOptions, ssr_segment
from panelbreaks.exceptions import CapacityError, InfeasibleError
from panelbreaks.panel import TrimmingSpec
from panelbreaks.simlab import DgpSpec, generate

from conftest import random_panel


def _table(data, h):
    zb = segment_zbase(data, breaking_x=False, options=FitOptions())
    return build_segment_table(data.y, data.w, zb, h), zb


def _oracle(data, zb, h, k):
    """Exhaustive search with every segment refitted from scratch."""
    t = data.n_periods
    best, best_dates = np.inf, None
    for dates in itertools.combinations(range(1, t), k):
        b = (0,) + dates + (t,)
        if min(np.diff(b)) < h:
            continue
        total = 0.0
        for j in range(k, -1, -1):
            total = ssr_segment(data.y, data.w, zb, b[j] + 1, b[j + 1]) + total
        if total < best:
            best, best_dates = total, dates
    return best_dates, best


def test_table_matches_direct_segment_regressions():
    rng = np.random.default_rng(0)
    data = random_panel(rng, 5, 10, p_w=1)
    table, zb = _table(data, 3)
    for a in range(1, 11):
        for b in range(a, 11):
            want = ssr_segment(data.y, data.w, zb, a, b) if b - a + 1 >= 3 else np.inf
            got = table.cost(a, b)
            if np.isinf(want):
                assert np.isinf(got)
            else:
                assert got == pytest.approx(want, rel=1e-9, abs=1e-12)
    assert table.n_evaluations > 0


def test_k0_is_full_sample_segment():
    rng = np.random.default_rng(1)
    data = random_panel(rng, 5, 12, p_w=1)
    table, _ = _table(data, 3)
    bs, ssr = dp_minimize(table, 0)[0]
    assert bs.dates == () and ssr == table.cost(1, 12)


def test_two_breaks_match_exhaustive_search():
    rng = np.random.default_rng(2)
    data = random_panel(rng, 6, 12, p_w=1)
    h = TrimmingSpec(0.2).min_length(12)
    table, zb = _table(data, h)
    bs, ssr = dp_minimize(table, 2)[2]
    dates, want = _oracle(data, zb, h, 2)
    assert bs.dates == dates
    assert ssr == pytest.approx(want, rel=1e-9)
    bf, bf_ssr = brute_force_minimize(table, TrimmingSpec(0.2), 2)
    assert bf.dates == bs.dates and bf_ssr == ssr


def test_planted_break_recovered_without_noise():
    rng = np.random.default_rng(3)
    t = 20
    data = random_panel(rng, 8, t, p_w=1, noise=0.0, breaks=(10,), shift=3.0)
    res = estimate_breaks(data, 1, 0.15)
    assert res.best_breaks.dates == (10,)
    assert res.iterations == 1 and res.converged


def test_two_planted_breaks_with_stable_regressor():
    rng = np.random.default_rng(4)
    t = 30
    data = random_panel(rng, 10, t, p_x=1, p_w=1, noise=0.0, breaks=(10, 20), shift=2.0)
    res = estimate_breaks(data, 2, 0.15)
    assert res.best_breaks.dates == (10, 20)


def test_ties_resolve_to_smallest_dates():
    ssr = np.full((6, 6), np.inf)
    for a in range(6):
        for b in range(a + 1, 6):
            ssr[a, b] = 1.0
    from panelbreaks.dpsearch import SegmentTable

    table = SegmentTable(ssr, 2, 0)
    bs, _ = dp_minimize(table, 1)[1]
    assert bs.dates == (2,)


def test_infeasible_and_capacity_errors():
    rng = np.random.default_rng(5)
    data = random_panel(rng, 4, 10, p_w=1)
    with pytest.raises(CapacityError):
        estimate_breaks(data, 3, 0.25)
    table, _ = _table(data, 4)
    with pytest.raises(InfeasibleError):
        dp_minimize(table, 2)


def test_partial_change_converges_quickly():
    spec = DgpSpec(n_units=100, n_periods=50, p_x=1, p_w=1, n_factors=1, breaks=(17, 33),
                   deltas=((0.0,), (1.5,), (0.0,)), seed=21)
    iters = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for r in range(200):
            res = estimate_breaks(generate(spec, r)[0], 2, 0.15)
            iters.append(res.iterations if res.converged else 99)
    assert np.mean(np.array(iters) <= 2) >= 0.95


def test_result_serialises():
    rng = np.random.default_rng(6)
    data = random_panel(rng, 5, 15, p_w=1, breaks=(7,), shift=2.0)
    d = estimate_breaks(data, 1).to_dict()
    assert d["breaks"] == [7]
    assert [e["k"] for e in d["per_k_optima"]] == [0, 1]


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(12, 24), st.integers(2, 6))
def test_optimal_ssr_falls_when_a_refinement_exists(seed, t, n):
    rng = np.random.default_rng(seed)
    data = random_panel(rng, n, t, p_w=1)
    h = 3
    table, _ = _table(data, h)
    kmax = t // h - 1
    per_k = dp_minimize(table, min(kmax, 3)) if kmax >= 1 else []
    for (bs, s), (_, s_next) in zip(per_k, per_k[1:]):
        if bs is None or not np.isfinite(s):
            continue
        if max(bs.regime_lengths()) >= 2 * h:
            assert s_next <= s * (1 + 1e-12) + 1e-12


def test_segment_no_longer_than_its_averages_is_infeasible():
    # two averages over two periods annihilate the segment; rounding noise must not fit
    rng = np.random.default_rng(7)
    data = random_panel(rng, 10, 10, p_w=2)
    table, zb = _table(data, 2)
    for a in range(1, 10):
        assert np.isinf(table.cost(a, a + 1))
        assert np.isinf(ssr_segment(data.y, data.w, zb, a, a + 1))
    assert np.isfinite(table.cost(1, 3))
