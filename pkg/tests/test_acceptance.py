"""End-to-end acceptance checks, one test per criterion.

Every statistical run uses root seed 2024.  Each test records a PASS/FAIL
line that is printed in the terminal summary.
"""
import math

import numpy as np
import pytest

from taemlmc import (TaemConfig, benchmark_model, linear_model, ou_model, simulate_coupled_pair,
                     simulate_terminal, tamed_diffusion, tamed_jump, zero_model)
from taemlmc import mlmc
from taemlmc.analysis import (builtin_functionals, contraction_test, cost_study, fit_rate, ols,
                              step_count_study, strong_error_table, variance_study)
from taemlmc.mlmc import MlmcPlan, calibrate_constants, default_k1, estimate, plan
from taemlmc.noise import bilateral_gamma, compound_poisson, levy_moment, make_streams

SEED = 2024
LEVELS = [2, 3, 4, 5, 6]
TABLE_SAMPLES = 10_000
PILOT_LEVELS, PILOT_SAMPLES = [0, 1, 2, 3, 4, 5], 2000
# E|X|^2 bound under the invariant law used for K1 on the benchmark model
BENCH_SECOND_MOMENT = 3.0

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def bench():
    return benchmark_model()


@pytest.fixture(scope="module")
def cp_tables(bench):
    return {T: strong_error_table(bench, compound_poisson(), LEVELS, T, TABLE_SAMPLES, SEED) for T in (5.0, 10.0)}


@pytest.fixture(scope="module")
def studies(bench):
    """Variance study per functional on the default eps grid (sqrt(K2) halved four times)."""
    out = {}
    for name, phi in builtin_functionals().items():
        cal = calibrate_constants(bench, compound_poisson(), phi, PILOT_LEVELS, PILOT_SAMPLES, SEED)
        K1 = default_k1(phi, bench.x0, BENCH_SECOND_MOMENT)
        eps = [math.sqrt(cal.K2) * 2.0**-k for k in range(5)]
        study = variance_study(bench, compound_poisson(), phi, eps, [32, 16, 8, 4, 2], SEED, (cal.K0, K1, cal.K2))
        out[name] = (cal, (cal.K0, K1, cal.K2), study)
    return out


def test_c01_strong_rate_finite_activity(cp_tables, criterion):
    t = cp_tables[5.0]
    fit, rate = fit_rate(t)
    decreasing = bool(np.all(np.diff(t.mse) < 0))
    ok = 0.45 <= rate <= 0.75 and decreasing
    criterion(1, ok, f"Lambda0={rate:.4f} in [0.45, 0.75], log2 MSE={np.round(t.log2_mse, 2).tolist()}, "
                     f"strictly decreasing={decreasing}")
    assert ok


def test_c02_strong_rate_infinite_activity(bench, criterion):
    t = strong_error_table(bench, bilateral_gamma(), LEVELS, 5.0, TABLE_SAMPLES, SEED)
    fit, rate = fit_rate(t)
    ok = 0.40 <= rate <= 0.70
    criterion(2, ok, f"Lambda0={rate:.4f} in [0.40, 0.70], log2 MSE={np.round(t.log2_mse, 2).tolist()}")
    assert ok


def test_c03_horizon_insensitivity(cp_tables, criterion):
    gap = np.abs(cp_tables[5.0].log2_mse - cp_tables[10.0].log2_mse)
    ok = bool(np.all(gap <= 0.6))
    criterion(3, ok, f"max |log2 MSE(l,5) - log2 MSE(l,10)| = {gap.max():.3f} <= 0.6, "
                     f"per level {np.round(gap, 3).tolist()}")
    assert ok


def test_c04_level_variance_decay(bench, criterion):
    cal = calibrate_constants(bench, compound_poisson(), builtin_functionals()["phi1"], [1, 2, 3, 4, 5],
                              TABLE_SAMPLES, SEED)
    ok = -1.4 <= cal.decay <= -0.6
    criterion(4, ok, f"slope of log2 V_l over levels 1-5 = {cal.decay:.4f} in [-1.4, -0.6], "
                     f"V_l={[f'{v:.3e}' for v in cal.variances]}")
    assert ok


def test_c05_planner_mse_guarantee(criterion):
    m, phi = ou_model(), builtin_functionals()["phi1"]
    eps = 0.05
    cal = calibrate_constants(m, None, phi, PILOT_LEVELS, PILOT_SAMPLES, SEED)
    # stationary law N(0, 0.125 I) gives E|X|^2 = 0.375
    p = plan(eps, m.contraction_rate, cal.K0, default_k1(phi, m.x0, 0.375), cal.K2, 2, phi.lipschitz_const)
    values = np.array([estimate(p, m, None, phi, SEED, tag=600 + r).value for r in range(50)])
    mse = float(np.mean(values**2))
    ok = mse <= 1.5 * eps**2
    criterion(5, ok, f"empirical MSE={mse:.3e} <= {1.5 * eps**2:.3e} over 50 runs "
                     f"(T={p.horizon}, L={p.max_level}, N0={p.samples[0]})")
    assert ok


@pytest.mark.parametrize("name", ["phi1", "phi2", "phi3"])
def test_c06_variance_vs_epsilon(studies, name, criterion):
    cal, _, study = studies[name]
    slope = study.fit.slope
    ok = 1.8 <= slope <= 3.0 and not study.degenerate
    criterion(6, ok, f"{name} slope={slope:.3f} in [1.8, 3.0] (eps0={study.epsilons[0]:.4f}, "
                     f"L={[p.max_level for p in study.plans]})", part=name)
    assert ok


def test_c07_cost_scaling(bench, studies, criterion):
    lines, ok = [], True
    for name, phi in builtin_functionals().items():
        _, consts, study = studies[name]
        # first repetition at each eps supplies the realized costs
        firsts = np.cumsum([0, 32, 16, 8, 4])
        ests = [study.estimates[i] for i in firsts]
        cs = cost_study(bench, compound_poisson(), phi, study.epsilons, SEED, consts, estimates=ests)
        s = cs.predicted_fit.slope
        ok = ok and -2.6 <= s <= -1.9
        lines.append(f"{name}: predicted {s:.3f}, steps {cs.step_fit.slope:.3f}, "
                     f"wall-clock {cs.wall_fit.slope:.3f}")
    criterion(7, ok, "predicted-cost slope in [-2.6, -1.9]; " + "; ".join(lines))
    assert ok


def test_c08_step_count_scaling(bench, criterion):
    s = step_count_study(bench, compound_poisson(), LEVELS, 5.0, 1000, SEED)
    ok = bool(np.all((s.ratios >= 1.8) & (s.ratios <= 2.2)))
    criterion(8, ok, f"E[N_T] ratios {np.round(s.ratios, 4).tolist()} in [1.8, 2.2]")
    assert ok


def _sequential_sums(sub_t, sub_w, grid):
    out, k = [], 0
    for t in grid[1:]:
        acc = np.zeros(sub_w.shape[1])
        while k < sub_t.size and sub_t[k] <= t:
            acc = acc + sub_w[k]
            k += 1
        out.append(acc)
    return np.array(out)


def test_c09_coupling_audit(bench, criterion):
    rng = np.random.default_rng(SEED)
    cfg = TaemConfig(0.25, 2, 5.0)
    bad = []
    for k in range(100):
        level = int(rng.integers(1, 5))
        driver = compound_poisson() if k % 2 == 0 else bilateral_gamma()
        streams = lambda: make_streams(SEED, 9, level, k)
        s = simulate_coupled_pair(bench, driver, level, cfg, streams(), record=True)
        tr = s.trace
        exact = all(np.array_equal(_sequential_sums(tr["sub_times"], tr["sub_draws"], tr[f"{n}_times"]),
                                   tr[f"{n}_increments"][1:]) for n in ("fine", "coarse"))
        same_path = np.allclose(tr["fine_increments"].sum(axis=0), tr["coarse_increments"].sum(axis=0),
                                rtol=0, atol=1e-12)
        r = simulate_coupled_pair(bench, driver, level, cfg, streams())
        replay = np.array_equal(r.fine, s.fine) and np.array_equal(r.coarse, s.coarse)
        if not (exact and same_path and replay):
            bad.append(k)
    ok = not bad
    criterion(9, ok, f"100 coupled pairs: exact shared-increment sums, replay bit-identical; failures={bad}")
    assert ok


def test_c10_taming_invariants(bench, criterion):
    rng = np.random.default_rng(SEED)
    n = 100_000
    scale = 10.0 ** rng.uniform(-3, 2, n)
    xs = rng.uniform(-1, 1, (n, 3)) * scale[:, None]
    deltas = rng.uniform(1e-6, 1.0, n)
    deltas[deltas >= 1.0] = 0.5
    regimes = rng.integers(1, 3, n)
    worst = 0.0
    for x, d, i in zip(xs, deltas, regimes):
        cap = d**-0.5
        s = np.linalg.norm(bench.diffusion(i, x))
        g = np.linalg.norm(bench.jump_coeff(i, x))
        worst = max(worst,
                    np.linalg.norm(tamed_diffusion(bench, d, i, x)) - min(s, cap),
                    np.linalg.norm(tamed_jump(bench, d, i, x)) - min(g, cap))
    ok = worst <= 1e-9
    criterion(10, ok, f"{n} probes, max excess over min(|coef|, Delta^-1/2) = {worst:.2e} <= 1e-9")
    assert ok


def test_c11_contraction(bench, criterion):
    gaps = contraction_test(bench, compound_poisson(), np.zeros(3), np.array([1.0, 0.0, 0.0]), [1.0, 5.0],
                            1000, SEED)
    t = np.array([0.5, 1.0, 2.0, 3.0])
    lin = contraction_test(linear_model(), None, [1.0], [0.0], t, 10, SEED, delta=2.0**-8)
    rel = np.abs(lin / np.exp(-2 * t) - 1.0)
    ok = gaps[1] < gaps[0] and bool(np.all(rel <= 0.10))
    criterion(11, ok, f"benchmark gap(1)={gaps[0]:.4e}, gap(5)={gaps[1]:.4e}; linear model max rel. "
                      f"deviation from exp(-2t) = {rel.max():.4f} <= 0.10")
    assert ok


def test_c12_unit_exactness(monkeypatch, criterion):
    checks = {}
    a = [0.7, -0.25, 0.125, 1e-3]
    monkeypatch.setattr(mlmc, "_level_correctors",
                        lambda m, d, phi, level, n, *rest: (np.full(n, a[level]), n, 0, []))
    p = MlmcPlan(0.1, 2, 2, 3, (8, 4, 2, 2), 1.0, 1.0, 1.0, -1.0, 1.0)
    est = estimate(p, zero_model(), None, builtin_functionals()["phi1"], SEED)
    checks["telescoping"] = abs(est.value - sum(a)) <= 1e-12
    monkeypatch.undo()

    x = np.array([-2.0, 0.5, 1.0, 4.0, 9.5])
    fit = ols(x, 1.25 - 0.75 * x)
    checks["ols"] = abs(fit.slope + 0.75) <= 1e-12 and abs(fit.intercept - 1.25) <= 1e-12

    x0 = np.array([0.3, -1.2, 2.0])
    res = simulate_terminal(zero_model(x0=x0), compound_poisson(), TaemConfig(0.25, 2, 5.0),
                            make_streams(SEED, 0), level=3)
    checks["zero dynamics"] = float(np.max(np.abs(res.terminal - x0))) <= 1e-12

    checks["levy moments"] = (abs(levy_moment(compound_poisson(dim=1), 2) - 1.6) <= 1e-12
                              and abs(levy_moment(bilateral_gamma(dim=1), 2) - 0.02) <= 1e-12
                              and abs(levy_moment(compound_poisson(dim=3), 2) - 4.8) <= 1e-12)
    ok = all(checks.values())
    criterion(12, ok, ", ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok
