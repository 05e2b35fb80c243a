import math
import warnings

import numpy as np
import pytest

from taemlmc import benchmark_model, zero_model
from taemlmc import mlmc
from taemlmc.analysis import builtin_functionals
from taemlmc.mlmc import (EstimateAborted, MlmcPlan, calibrate_constants, default_k1, estimate,
                          fit_variance_constants, plan, predicted_cost)
from taemlmc.model import Functional
from taemlmc.noise import compound_poisson

from _models import constant_model

PHI = builtin_functionals()


# -- planner -----------------------------------------------------------------


def test_plan_reference_example():
    p = plan(0.1, -1.0, 1.0, 1.0, 1.0, 2, 1.0)
    assert (p.horizon, p.max_level) == (7, 10)
    assert p.samples[0] == 3300 and p.samples[10] == 4
    assert len(p.samples) == 11 and p.clamped == ()
    assert list(p.levels) == list(range(11))


def test_plan_formulas_by_hand():
    eps, alpha, K0, K1, K2, M, Lp = 0.03, -0.7, 0.2, 3.0, 0.5, 3, 1.7
    p = plan(eps, alpha, K0, K1, K2, M, Lp)
    T = math.ceil(math.log(eps**2 / (6 * K1**2)) / alpha)
    L = math.ceil((2 * abs(math.log(eps)) + math.log(6 * K0 * Lp**2)) / math.log(M))
    assert (p.horizon, p.max_level) == (T, L)
    assert p.samples == tuple(math.ceil(3 * K2 * (L + 1) / (eps**2 * M**l)) for l in range(L + 1))


def test_plan_clamps_horizon_and_levels():
    # eps^2 = 6 K1^2 puts the log term at zero (up to rounding)
    p = plan(math.sqrt(6.0), -1.0, 1e-3, 1.0, 1.0)
    assert p.horizon == 1 and p.max_level == 1
    p = plan(3.0, -1.0, 1e-3, 1.0, 1.0)
    assert p.horizon == 1 and p.max_level == 1
    assert set(p.clamped) == {"horizon", "max_level"}


def test_halving_eps_scales_level0_samples():
    a = plan(0.1, -1.0, 1.0, 1.0, 1.0)
    b = plan(0.05, -1.0, 1.0, 1.0, 1.0)
    expected = 4.0 * (b.max_level + 1) / (a.max_level + 1)
    assert b.samples[0] / a.samples[0] == pytest.approx(expected, rel=1e-3)


def test_samples_nonincreasing_in_level():
    p = plan(0.01, -0.5, 0.3, 2.0, 4.0, 4)
    assert all(x >= y for x, y in zip(p.samples, p.samples[1:]))


@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=0.5), dict(epsilon=0.0), dict(K0=-1.0),
                                dict(K2=math.nan), dict(level_ratio=1), dict(level_ratio=2.5)])
def test_plan_rejects_bad_input(kw):
    args = dict(epsilon=0.1, alpha=-1.0, K0=1.0, K1=1.0, K2=1.0, level_ratio=2)
    args.update(kw)
    with pytest.raises(ValueError):
        plan(**args)


def test_predicted_cost_examples():
    single = MlmcPlan(0.1, 2, 5, 0, (10,), 1.0, 1.0, 1.0, -1.0, 1.0)
    assert predicted_cost(single) == 50.0
    p = plan(0.1, -1.0, 1.0, 1.0, 1.0)
    assert predicted_cost(p) == sum(n * 7 * 2**l for l, n in enumerate(p.samples))
    doubled = MlmcPlan(p.epsilon, p.level_ratio, p.horizon, p.max_level, tuple(2 * n for n in p.samples),
                       p.K0, p.K1, p.K2, p.alpha, p.lipschitz)
    assert predicted_cost(doubled) == 2 * predicted_cost(p)


def test_plan_structure_checked():
    with pytest.raises(ValueError):
        MlmcPlan(0.1, 2, 5, 2, (10, 5), 1.0, 1.0, 1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        MlmcPlan(0.1, 2, 0, 0, (10,), 1.0, 1.0, 1.0, -1.0, 1.0)


# -- estimator ---------------------------------------------------------------


def small_plan(samples=(40, 20, 10), horizon=2):
    return MlmcPlan(0.1, 2, horizon, len(samples) - 1, tuple(samples), 1.0, 1.0, 1.0, -1.0, 1.0)


def test_telescoping_identity(monkeypatch):
    a = [0.7, -0.25, 0.125, 1e-3]

    def fake(model, driver, phi, level, n, *rest):
        return np.full(n, a[level]), 10 * n, 0, []

    monkeypatch.setattr(mlmc, "_level_correctors", fake)
    est = estimate(small_plan((8, 4, 2, 2)), zero_model(), None, PHI["phi1"], 0)
    assert abs(est.value - sum(a)) <= 1e-12
    np.testing.assert_array_equal(est.level_means, a)
    np.testing.assert_array_equal(est.level_variances, np.zeros(4))
    assert est.step_cost == 10 * (8 + 4 + 2 + 2)


def test_constant_functional_is_exact():
    c = 2.5
    phi = Functional(lambda x: np.full(x.shape[0], c), 1.0, "const")
    est = estimate(small_plan(), benchmark_model(), compound_poisson(), phi, 3)
    assert est.value == c
    np.testing.assert_array_equal(est.level_variances, np.zeros(3))
    np.testing.assert_array_equal(est.level_means[1:], np.zeros(2))


def test_zero_model_estimate_is_zero():
    est = estimate(small_plan(), zero_model(), compound_poisson(), PHI["phi1"], 4)
    assert est.value == 0.0 and est.variance == 0.0


def test_estimate_bookkeeping_and_determinism():
    m, d = benchmark_model(), compound_poisson()
    p = small_plan((30, 15, 8))
    a = estimate(p, m, d, PHI["phi1"], 21)
    b = estimate(p, m, d, PHI["phi1"], 21)
    c = estimate(p, m, d, PHI["phi1"], 22)
    assert a.value == b.value and np.array_equal(a.level_variances, b.level_variances)
    assert np.array_equal(a.level_steps, b.level_steps)
    assert a.value != c.value
    assert a.value == float(np.sum(a.level_means))
    assert a.variance == pytest.approx(float(np.sum(a.level_variances / a.samples)), rel=1e-15)
    np.testing.assert_array_equal(a.samples, p.samples)
    assert a.step_cost == a.level_steps.sum() > 0
    rows = a.rows()
    assert [r["level"] for r in rows] == [0, 1, 2] and rows[0]["planned"] == 30


def test_estimate_matches_manual_level_statistics():
    from taemlmc import run_batch

    m, d, phi = benchmark_model(), compound_poisson(), PHI["phi1"]
    p = small_plan((12, 6))
    est = estimate(p, m, d, phi, 8, tag=5)
    y0 = phi(run_batch(m, d, [0.25], 12, 2, 8, (5, 0)).values[:, 0])
    v1 = run_batch(m, d, [0.125, 0.25], 6, 2, 8, (5, 1)).values
    y1 = phi(v1[:, 0]) - phi(v1[:, 1])
    np.testing.assert_allclose(est.level_means, [y0.mean(), y1.mean()], rtol=1e-14)
    np.testing.assert_allclose(est.level_variances, [y0.var(ddof=1), y1.var(ddof=1)], rtol=1e-12)


def test_estimate_aborts_on_failures():
    m = constant_model(math.nan, 0.0, 0.0)
    phi = Functional(lambda x: x[:, 0], 1.0, "x")
    with pytest.raises(EstimateAborted):
        estimate(small_plan((5, 3)), m, None, phi, 0)


def test_estimate_warns_for_non_lipschitz_functional():
    with pytest.warns(UserWarning, match="not globally Lipschitz"):
        estimate(small_plan((4, 2)), zero_model(), None, PHI["phi2"], 0)


def test_estimate_rejects_bad_base_step():
    with pytest.raises(ValueError):
        estimate(small_plan(), zero_model(), None, PHI["phi1"], 0, base_step=1.0)


def test_two_seeds_agree_within_two_eps():
    m, d, phi = benchmark_model(), compound_poisson(), PHI["phi1"]
    eps = 0.1
    p = plan(eps, m.contraction_rate, 2e-4, default_k1(phi, m.x0, 3.0), 0.19, 2, phi.lipschitz_const)
    values = [estimate(p, m, d, phi, seed).value for seed in (31, 32)]
    assert abs(values[0] - values[1]) <= 2 * eps


# -- constants ---------------------------------------------------------------


def test_fit_exact_geometric_variances():
    lv = [1, 2, 3, 4]
    cal = fit_variance_constants(lv, [8.0 * 2.0**-l for l in lv], 2, 1.0)
    assert abs(cal.K2 - 8.0) <= 1e-12
    assert abs(cal.decay + 1.0) <= 1e-12 and cal.decay_ok
    assert cal.K0 == pytest.approx(8.0 / (2.0 * 1.0 * 3.0), rel=1e-12)


def test_fit_inverts_lipschitz_constant():
    cal = fit_variance_constants([1, 2], [4.0, 1.0], 4, 2.0)
    assert cal.K0 == pytest.approx(cal.K2_fit / (2.0 * 4.0 * 5.0), rel=1e-12)


def test_fit_flags_flat_variances():
    with pytest.warns(UserWarning, match="decay exponent"):
        cal = fit_variance_constants([1, 2, 3], [0.5, 0.5, 0.5])
    assert abs(cal.decay) < 1e-12 and not cal.decay_ok


def test_level0_variance_raises_k2_only():
    cal = fit_variance_constants([1, 2], [0.02, 0.01], 2, 1.0, level0_variance=0.3)
    assert cal.K2 == 0.3
    assert cal.K0 == pytest.approx(cal.K2_fit / 6.0)
    assert fit_variance_constants([1, 2], [0.2, 0.1], 2, 1.0, level0_variance=0.3).K2 == pytest.approx(0.4)


@pytest.mark.parametrize("levels,variances", [([1, 2], [0.1, 0.0]), ([1, 2], [0.1, -1.0]), ([1], [0.1]),
                                              ([2, 2], [0.1, 0.2]), ([1, 2], [0.1, math.inf])])
def test_fit_rejects_bad_data(levels, variances):
    with pytest.raises(ValueError):
        fit_variance_constants(levels, variances)


def test_calibration_on_zero_model_fails_cleanly():
    with pytest.raises(ValueError, match="positive"):
        calibrate_constants(zero_model(), None, PHI["phi1"], [1, 2], 10, 0)


def test_calibration_needs_two_fine_levels():
    with pytest.raises(ValueError):
        calibrate_constants(zero_model(), None, PHI["phi1"], [0, 1], 10, 0)


def test_calibration_benchmark_pilot():
    # the decay over levels 1-4 is close to -1.4, so the pilot runs one level deeper
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cal = calibrate_constants(benchmark_model(), compound_poisson(), PHI["phi1"], [0, 1, 2, 3, 4, 5], 2000, 2024)
    assert cal.decay_ok and -1.4 <= cal.decay <= -0.6
    assert cal.K2 == cal.level0_variance > cal.K2_fit
    assert cal.levels == (1, 2, 3, 4, 5)


def test_default_k1():
    phi = PHI["phi1"]
    assert default_k1(phi, np.zeros(3), 4.0) == pytest.approx(2 * math.sqrt(3) * 2.0)
    assert default_k1(phi, np.array([3.0, 4.0, 0.0]), 0.0) == pytest.approx(2 * math.sqrt(3) * 5.0)
    with pytest.raises(ValueError):
        default_k1(phi, np.zeros(3), -1.0)
