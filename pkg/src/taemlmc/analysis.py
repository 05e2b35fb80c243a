"""Empirical studies: strong-error tables, rate fits, variance and cost scaling."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mlmc import MlmcEstimate, MlmcPlan, estimate, plan, predicted_cost
from .model import Functional, RegimeModel
from .noise import JumpDriver, make_streams
from .taem import run_batch, simulate_synchronous

__all__ = [
    "RegressionFit",
    "StrongErrorTable",
    "VarianceStudy",
    "CostStudy",
    "StepCountStudy",
    "ols",
    "strong_error_table",
    "fit_rate",
    "variance_study",
    "cost_study",
    "step_count_study",
    "builtin_functionals",
    "contraction_test",
]


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    def predict(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)


def ols(x, y) -> RegressionFit:
    """Unweighted least-squares line y = intercept + slope * x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("regression data must be finite")
    if np.unique(x).size < 2:
        raise ValueError("regression needs at least two distinct abscissae")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    slope = float(dx @ dy) / sxx
    intercept = float(ym - slope * xm)
    syy = float(dy @ dy)
    if syy == 0.0:
        r2 = 1.0
    else:
        resid = dy - slope * dx
        r2 = min(1.0, max(0.0, 1.0 - float(resid @ resid) / syy))
    return RegressionFit(slope, intercept, r2, int(x.size))


# ---------------------------------------------------------------------------
# strong error


@dataclass
class StrongErrorTable:
    """MSE(l, T) between step scales M^-l and M^-(l+1), averaged over samples."""

    horizon: float
    levels: np.ndarray
    mse: np.ndarray
    samples: np.ndarray          # successful pairs per level
    failures: np.ndarray
    mean_steps: np.ndarray       # (n_levels, 2): fine, coarse
    level_ratio: int = 2
    errors: list = field(default_factory=list, repr=False)

    @property
    def log2_mse(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log2(self.mse)


def strong_error_table(model: RegimeModel, driver: Optional[JumpDriver], levels: Sequence[int],
                       horizon: float, samples: int, root_seed: int, level_ratio: int = 2,
                       workers: int = 1, tag: int = 1) -> StrongErrorTable:
    """For each level l, ``samples`` coupled pairs at step scales M^-(l+1) and M^-l."""
    levels = np.asarray(list(levels), dtype=int)
    if levels.size < 2 or np.any(np.diff(levels) != 1):
        raise ValueError("levels must be at least two consecutive integers")
    if levels[0] < 1:
        raise ValueError("levels must be >= 1 so that every step scale lies in (0, 1)")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    M = float(level_ratio)
    mse = np.zeros(levels.size)
    done = np.zeros(levels.size, np.int64)
    failures = np.zeros(levels.size, np.int64)
    steps = np.zeros((levels.size, 2))
    errors = []
    for k, l in enumerate(levels):
        batch = run_batch(model, driver, [M ** -(l + 1), M ** -l], samples, horizon, root_seed,
                          (tag, int(l)), workers=workers)
        ok = ~batch.failed
        v = batch.values[ok]
        mse[k] = np.mean(np.sum((v[:, 0] - v[:, 1]) ** 2, axis=1)) if ok.any() else math.nan
        done[k], failures[k] = ok.sum(), batch.failed.sum()
        steps[k] = batch.steps[ok].mean(axis=0) if ok.any() else math.nan
        errors += [f"level {l}: {e}" for e in batch.errors]
    return StrongErrorTable(float(horizon), levels, mse, done, failures, steps, int(level_ratio), errors)


def fit_rate(table: StrongErrorTable):
    """OLS of log2 MSE on l; returns (fit, Lambda0 = -slope / 2)."""
    keep = table.mse > 0
    if not np.all(keep):
        warnings.warn(f"levels {table.levels[~keep].tolist()} have zero MSE and are left out of the fit",
                      stacklevel=2)
    fit = ols(table.levels[keep], np.log2(table.mse[keep]))
    return fit, -fit.slope / 2.0


# ---------------------------------------------------------------------------
# variance and cost versus accuracy


@dataclass
class VarianceStudy:
    fit: RegressionFit
    epsilons: np.ndarray
    variances: np.ndarray
    values: list                  # per epsilon, the repeated estimates
    plans: list
    estimates: list = field(default_factory=list, repr=False)
    degenerate: bool = False


def _plan_for(eps, model, phi, constants, level_ratio):
    K0, K1, K2 = constants
    return plan(eps, model.contraction_rate, K0, K1, K2, level_ratio, phi.lipschitz_const)


def variance_study(model: RegimeModel, driver: Optional[JumpDriver], phi: Functional,
                   epsilons: Sequence[float], repetitions: Sequence[int], root_seed: int,
                   constants, base_step: float = 0.25, level_ratio: int = 2, workers: int = 1,
                   distinct_seeds: bool = True, max_failure_rate: float = 0.01) -> VarianceStudy:
    """Fit log2 Var(Y) on log2 eps from repeated independent estimates per eps.

    ``constants`` is (K0, K1, K2).  Repetition ``r`` at the ``i``-th eps uses
    stream tag ``1000 * (i + 1) + r``; with ``distinct_seeds=False`` every
    repetition reuses one tag, which gives zero variance and is flagged.
    """
    eps = np.asarray(epsilons, dtype=float)
    reps = list(repetitions)
    if np.unique(eps).size < 2:
        raise ValueError("need at least two distinct eps values")
    if len(reps) != eps.size or min(reps) < 2:
        raise ValueError("need one repetition count >= 2 per eps")
    variances, values, plans, ests = [], [], [], []
    for i, (e, n) in enumerate(zip(eps, reps)):
        p = _plan_for(e, model, phi, constants, level_ratio)
        got = []
        for r in range(n):
            tag = 1000 * (i + 1) + (r if distinct_seeds else 0)
            est = estimate(p, model, driver, phi, root_seed, base_step, workers, max_failure_rate, tag=tag)
            got.append(est.value)
            ests.append(est)
        got = np.asarray(got)
        values.append(got)
        plans.append(p)
        variances.append(float(np.var(got, ddof=1)))
    variances = np.asarray(variances)
    keep = variances > 0
    degenerate = not np.all(keep)
    if degenerate:
        warnings.warn("zero sample variance at eps = "
                      f"{eps[~keep].tolist()}; repetitions are not independent", stacklevel=2)
    if keep.sum() < 2:
        raise ValueError("fewer than two eps values with positive variance; the study is degenerate")
    fit = ols(np.log2(eps[keep]), np.log2(variances[keep]))
    return VarianceStudy(fit, eps, variances, values, plans, ests, degenerate)


@dataclass
class CostStudy:
    epsilons: np.ndarray
    predicted: np.ndarray
    predicted_fit: RegressionFit
    step_cost: Optional[np.ndarray] = None
    step_fit: Optional[RegressionFit] = None
    wall_clock: Optional[np.ndarray] = None
    wall_fit: Optional[RegressionFit] = None
    plans: list = field(default_factory=list, repr=False)


def cost_study(model: RegimeModel, driver: Optional[JumpDriver], phi: Functional,
               epsilons: Sequence[float], root_seed: int, constants, base_step: float = 0.25,
               level_ratio: int = 2, workers: int = 1, simulate: bool = True,
               estimates: Optional[Sequence[MlmcEstimate]] = None) -> CostStudy:
    """Fit log2 cost on log2 eps for the predicted, step-count and wall-clock costs.

    With ``simulate=False`` only the planner's predicted cost is fitted.
    Precomputed ``estimates`` (one per eps, in order) are used instead of new runs.
    """
    eps = np.asarray(epsilons, dtype=float)
    if np.unique(eps).size < 2:
        raise ValueError("need at least two distinct eps values")
    plans = [_plan_for(e, model, phi, constants, level_ratio) for e in eps]
    pred = np.array([predicted_cost(p) for p in plans])
    out = CostStudy(eps, pred, ols(np.log2(eps), np.log2(pred)), plans=plans)
    if not simulate and estimates is None:
        return out
    if estimates is None:
        estimates = [estimate(p, model, driver, phi, root_seed, base_step, workers, tag=500 + i)
                     for i, p in enumerate(plans)]
    if len(estimates) != eps.size:
        raise ValueError("need one estimate per eps")
    out.step_cost = np.array([e.step_cost for e in estimates], dtype=float)
    out.wall_clock = np.array([e.wall_clock for e in estimates], dtype=float)
    out.step_fit = ols(np.log2(eps), np.log2(out.step_cost))
    out.wall_fit = ols(np.log2(eps), np.log2(out.wall_clock))
    return out


@dataclass
class StepCountStudy:
    horizon: float
    levels: np.ndarray
    mean_steps: np.ndarray
    samples: int

    @property
    def ratios(self) -> np.ndarray:
        return self.mean_steps[1:] / self.mean_steps[:-1]


def step_count_study(model: RegimeModel, driver: Optional[JumpDriver], levels: Sequence[int],
                     horizon: float, samples: int, root_seed: int, level_ratio: int = 2,
                     workers: int = 1, tag: int = 3) -> StepCountStudy:
    """Mean number of steps to reach the horizon at step scale M^-l."""
    levels = np.asarray(list(levels), dtype=int)
    means = np.zeros(levels.size)
    for k, l in enumerate(levels):
        b = run_batch(model, driver, [float(level_ratio) ** -l], samples, horizon, root_seed,
                      (tag, int(l)), workers=workers)
        means[k] = b.steps[~b.failed, 0].mean()
    return StepCountStudy(float(horizon), levels, means, int(samples))


# ---------------------------------------------------------------------------
# functionals and contraction


def _phi1(x):
    return x.sum(axis=1)


def _phi2(x):
    return np.einsum("ij,ij->i", x, x)


def _phi3(x):
    s = np.abs(x.sum(axis=1))
    return s / (s + 1.0)


def builtin_functionals(dim: int = 3) -> dict:
    """phi1 = coordinate sum, phi2 = squared norm, phi3 = s/(1+s) with s = |coordinate sum|.

    phi2 is not globally Lipschitz; its constant 2*sqrt(dim) is the Lipschitz
    constant on the unit ball and serves only as a planning surrogate.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    r = math.sqrt(dim)
    return {
        "phi1": Functional(_phi1, r, "phi1", dim=dim),
        "phi2": Functional(_phi2, 2.0 * r, "phi2", globally_lipschitz=False, dim=dim),
        "phi3": Functional(_phi3, r, "phi3", dim=dim),
    }


def contraction_test(model: RegimeModel, driver: Optional[JumpDriver], x0, y0, t_grid,
                     samples: int, root_seed: int, delta: float = 2.0**-6, tag: int = 7) -> np.ndarray:
    """Mean of |X_t - Y_t|^2 at ``t_grid`` over ``samples`` synchronously coupled pairs."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        raise ValueError("t_grid must not be empty")
    horizon = float(t_grid[-1])
    acc = np.zeros(t_grid.size)
    for k in range(samples):
        obs = simulate_synchronous(model, driver, delta, x0, y0, horizon, t_grid,
                                   make_streams(root_seed, tag, 0, k))
        acc += np.sum((obs[:, 0] - obs[:, 1]) ** 2, axis=1)
    return acc / samples
