from __future__ import annotations

import numpy as np
import pytest

from panelbreaks.estimator import fit_breaks
from panelbreaks.simlab import (DgpSpec, McReport, ToolboxConfig, binary_se, generate,
                                run_experiment, with_units)


def test_generation_is_deterministic():
    spec = DgpSpec(n_units=20, n_periods=15, p_x=1, p_w=1, n_factors=1, seed=5)
    a, _ = generate(spec, 3)
    b, _ = generate(spec, 3)
    assert a.equals(b)
    c, _ = generate(spec, 4)
    assert not np.array_equal(a.y, c.y)


def test_units_do_not_depend_on_panel_width():
    spec = DgpSpec(n_units=10, n_periods=12, p_w=2, n_factors=1, seed=6)
    small, _ = generate(spec, 0)
    big, _ = generate(with_units(spec, 25), 0)
    np.testing.assert_array_equal(small.y, big.y[:10])
    np.testing.assert_array_equal(small.w, big.w[:10])


def test_zero_noise_panel_is_exact_model():
    spec = DgpSpec(n_units=8, n_periods=20, p_x=1, p_w=1, n_factors=1, breaks=(10,),
                   beta=(0.5,), deltas=((1.0,), (2.0,)), sigma=0.0, seed=7)
    data, truth = generate(spec, 0)
    d_t = truth.deltas[truth.breaks.regime_index()]
    fitted = (data.x[:, :, 0] * 0.5 + np.einsum("ntp,tp->nt", data.w, d_t)
              + truth.gamma @ truth.factors.T)
    np.testing.assert_allclose(data.y, fitted, atol=1e-12)


def test_constant_factor_is_one_way_fixed_effects():
    spec = DgpSpec(n_units=50, n_periods=12, p_w=1, n_factors=1, factor="constant",
                   breaks=(6,), deltas=((1.0,), (2.0,)), sigma=0.0, seed=8)
    data, truth = generate(spec, 0)
    np.testing.assert_array_equal(truth.factors, 1.0)
    # without noise the remainder is a time-invariant unit level
    rest = data.y - np.einsum("ntp,tp->nt", data.w, truth.deltas[truth.breaks.regime_index()])
    np.testing.assert_allclose(rest, rest[:, :1].repeat(12, axis=1), atol=1e-12)


def test_constant_factor_estimates_are_accurate_for_large_n():
    spec = DgpSpec(n_units=2000, n_periods=12, p_w=1, n_factors=1, factor="constant",
                   breaks=(6,), deltas=((1.0,), (2.0,)), seed=9)
    fit = fit_breaks(generate(spec, 0)[0], (6,))
    np.testing.assert_allclose(fit.delta_by_regime[:, 0], [1.0, 2.0], atol=0.05)


def test_rank_condition_enforced():
    with pytest.raises(ValueError, match="rank"):
        DgpSpec(p_w=1, n_factors=2)


def test_inadmissible_truth_rejected():
    with pytest.raises(ValueError, match="admissible"):
        DgpSpec(n_periods=20, p_w=1, n_factors=1, breaks=(2,), deltas=((1.0,), (2.0,)))


def test_spec_round_trips_through_dict():
    spec = DgpSpec(n_periods=30, p_w=1, n_factors=1, breaks=(15,), deltas=((1.0,), (2.0,)))
    assert DgpSpec.from_dict(spec.to_dict()) == spec


def test_report_standard_error_is_binomial():
    assert binary_se(0.05, 1000) == pytest.approx(np.sqrt(0.05 * 0.95 / 1000))
    spec = DgpSpec(n_units=30, n_periods=20, p_w=1, n_factors=1, breaks=(10,),
                   deltas=((0.0,), (3.0,)), seed=10)
    rep = run_experiment("hit_rate", spec, ToolboxConfig(), reps=20)
    assert isinstance(rep, McReport)
    assert rep.se == pytest.approx(binary_se(rep.rate, 20 - rep.failures))
    assert "mean_abs_error" in rep.extra and "rate" in rep.table()


def test_parallel_run_equals_serial_run():
    spec = DgpSpec(n_units=30, n_periods=20, p_w=1, n_factors=1, breaks=(10,),
                   deltas=((0.0,), (1.0,)), seed=11)
    a = run_experiment("coverage", spec, ToolboxConfig(), reps=12)
    b = run_experiment("coverage", spec, ToolboxConfig(), reps=12, n_jobs=3)
    assert a.to_dict() == b.to_dict()


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        run_experiment("bias", DgpSpec(), reps=1)
