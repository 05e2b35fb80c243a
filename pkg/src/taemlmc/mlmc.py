"""Multi-level Monte Carlo estimation of stationary expectations.

Level ``l`` runs the scheme at step scale ``base_step * M**-l``.  Level 0
averages phi over single paths; every finer level averages the corrector
phi(fine) - phi(coarse) over coupled pairs.  The estimate is the sum of the
level means.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import Functional, RegimeModel
from .noise import JumpDriver
from .taem import SimulationError, run_batch

__all__ = [
    "MlmcPlan",
    "MlmcEstimate",
    "Calibration",
    "EstimateAborted",
    "plan",
    "predicted_cost",
    "estimate",
    "fit_variance_constants",
    "calibrate_constants",
    "default_k1",
    "DECAY_BAND",
]

# accepted band for the fitted per-level variance decay exponent (log base M)
DECAY_BAND = (-1.4, -0.6)


class EstimateAborted(SimulationError):
    """Too many samples failed for the estimate to be trusted."""


@dataclass(frozen=True)
class MlmcPlan:
    epsilon: float
    level_ratio: int
    horizon: int
    max_level: int
    samples: tuple
    K0: float
    K1: float
    K2: float
    alpha: float
    lipschitz: float
    # names of quantities raised to their floor of 1
    clamped: tuple = ()

    def __post_init__(self):
        # plan() never returns max_level 0, but a single-level plan is valid
        if self.horizon < 1 or self.max_level < 0 or min(self.samples) < 1:
            raise ValueError("horizon and every sample count must be >= 1, max_level >= 0")
        if len(self.samples) != self.max_level + 1:
            raise ValueError("need one sample count per level 0..max_level")

    @property
    def levels(self) -> range:
        return range(self.max_level + 1)


def _positive(**values):
    for name, v in values.items():
        if not (isinstance(v, (int, float, np.floating, np.integer)) and math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite, got {v!r}")


def plan(epsilon: float, alpha: float, K0: float, K1: float, K2: float,
         level_ratio: int = 2, lipschitz: float = 1.0) -> MlmcPlan:
    """Horizon, level count and per-level sample sizes for target accuracy epsilon.

    T = ceil(log(eps^2 / (6 K1^2)) / alpha)
    L = ceil((2 |log eps| + log(6 K0 Lphi^2)) / log M)
    N_l = ceil(3 K2 (L + 1) / (eps^2 M^l))

    T and L are raised to 1 when the formulas give less; the plan records it.
    """
    _positive(epsilon=epsilon, K0=K0, K1=K1, K2=K2, lipschitz=lipschitz)
    if not alpha < 0:
        raise ValueError(f"alpha must be negative (contracting model), got {alpha}")
    if int(level_ratio) != level_ratio or level_ratio < 2:
        raise ValueError(f"level_ratio must be an integer >= 2, got {level_ratio}")
    M = int(level_ratio)
    clamped = []
    T = math.ceil(math.log(epsilon**2 / (6.0 * K1**2)) / alpha)
    if T < 1:
        T = 1
        clamped.append("horizon")
    L = math.ceil((2.0 * abs(math.log(epsilon)) + math.log(6.0 * K0 * lipschitz**2)) / math.log(M))
    if L < 1:
        L = 1
        clamped.append("max_level")
    samples = tuple(math.ceil(3.0 * K2 * (L + 1) / (epsilon**2 * float(M) ** l)) for l in range(L + 1))
    return MlmcPlan(float(epsilon), M, int(T), int(L), samples, float(K0), float(K1), float(K2),
                    float(alpha), float(lipschitz), tuple(clamped))


def predicted_cost(p: MlmcPlan) -> float:
    """sum_l N_l T M^l, in units of expected simulated steps."""
    return float(sum(n * p.horizon * float(p.level_ratio) ** l for l, n in enumerate(p.samples)))


@dataclass
class MlmcEstimate:
    value: float
    level_means: np.ndarray
    level_variances: np.ndarray
    samples: np.ndarray          # realized (successful) samples per level
    failures: np.ndarray
    level_steps: np.ndarray      # simulated steps per level, both copies
    step_cost: int
    wall_clock: float            # seconds; not reproducible
    root_seed: int
    plan: MlmcPlan
    errors: list = field(default_factory=list, repr=False)

    @property
    def variance(self) -> float:
        """Estimated Var of the estimate, sum_l V_l / N_l."""
        return float(np.sum(self.level_variances / self.samples))

    def rows(self) -> list[dict]:
        return [
            {"level": l, "planned": self.plan.samples[l], "samples": int(self.samples[l]),
             "failures": int(self.failures[l]), "mean": float(self.level_means[l]),
             "variance": float(self.level_variances[l]), "steps": int(self.level_steps[l])}
            for l in self.plan.levels
        ]


def _mean_var(y: np.ndarray):
    # shifting by the first value keeps constant data exact
    if y.size == 0:
        return math.nan, math.nan
    c = y[0]
    dev = y - c
    mean = c + dev.mean()
    var = float(dev.var(ddof=1)) if y.size > 1 else 0.0
    return float(mean), var


def _level_correctors(model, driver, phi, level, n, horizon, base_step, M, root_seed, tag, workers):
    delta = base_step * float(M) ** (-level)
    deltas = [delta] if level == 0 else [delta, delta * M]
    batch = run_batch(model, driver, deltas, n, horizon, root_seed, (tag, level), workers=workers)
    ok = ~batch.failed
    vals = batch.values[ok]
    y = phi(vals[:, 0])
    if level > 0:
        y = y - phi(vals[:, 1])
    return y, int(batch.steps[ok].sum()), int(batch.failed.sum()), batch.errors


def estimate(p: MlmcPlan, model: RegimeModel, driver: Optional[JumpDriver], phi: Functional,
             root_seed: int, base_step: float = 0.25, workers: int = 1,
             max_failure_rate: float = 0.01, tag: int = 0) -> MlmcEstimate:
    """Run the telescoping estimator for plan ``p``.

    Sample ``k`` of level ``l`` draws from streams keyed ``(root_seed, tag, l, k)``.
    Failed samples are dropped and counted; if more than ``max_failure_rate``
    of the samples on any level fail, :class:`EstimateAborted` is raised.
    """
    if not 0 < base_step < 1:
        raise ValueError("base_step must lie in (0, 1)")
    if not phi.globally_lipschitz:
        warnings.warn(f"functional {phi.name} is not globally Lipschitz; the planner's guarantee does not apply",
                      stacklevel=2)
    nlev = p.max_level + 1
    means, variances = np.zeros(nlev), np.zeros(nlev)
    done, failures, steps = np.zeros(nlev, np.int64), np.zeros(nlev, np.int64), np.zeros(nlev, np.int64)
    errors = []
    start = time.perf_counter()
    for l in p.levels:
        n = p.samples[l]
        y, st, nfail, errs = _level_correctors(model, driver, phi, l, n, p.horizon, base_step,
                                               p.level_ratio, root_seed, tag, workers)
        errors += errs
        if nfail > max_failure_rate * n or y.size == 0:
            raise EstimateAborted(
                f"level {l}: {nfail} of {n} samples failed (threshold {max_failure_rate:.2%}); "
                f"first error: {errs[0] if errs else 'none'}",
                level=l,
            )
        means[l], variances[l] = _mean_var(y)
        done[l], failures[l], steps[l] = y.size, nfail, st
    wall = time.perf_counter() - start
    return MlmcEstimate(float(np.sum(means)), means, variances, done, failures, steps, int(steps.sum()),
                        wall, int(root_seed), p, errors)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class Calibration:
    K0: float
    K2: float
    decay: float                 # free-fit exponent of V_l in powers of M
    levels: tuple
    variances: tuple
    K2_fit: float = math.nan     # fixed-slope fit over the corrector levels alone
    level0_variance: Optional[float] = None

    @property
    def decay_ok(self) -> bool:
        return DECAY_BAND[0] <= self.decay <= DECAY_BAND[1]


def fit_variance_constants(levels, variances, level_ratio: int = 2, lipschitz: float = 1.0,
                           level0_variance: Optional[float] = None) -> Calibration:
    """Fit V_l = K2 M^-l in log space and invert K2 = 2 Lphi^2 K0 (1 + M).

    ``levels`` are corrector levels (>= 1).  K0 describes the discretization
    error, so it comes from the corrector fit alone.  The K2 used for sample
    sizes must also bound level 0, whose "corrector" is phi itself, so it is
    raised to ``level0_variance`` when that is given and larger.  The decay
    exponent is fitted separately with a free slope; a value outside
    ``DECAY_BAND`` means the variance does not decay like M^-l and is warned
    about.
    """
    lv = np.asarray(levels, dtype=float)
    v = np.asarray(variances, dtype=float)
    if lv.size < 2 or lv.size != v.size:
        raise ValueError("need matching level and variance lists with at least two entries")
    if np.unique(lv).size < 2:
        raise ValueError("levels must contain at least two distinct values")
    if np.any(~(v > 0)) or not np.all(np.isfinite(v)):
        raise ValueError(f"fitted variances must be positive, got {v.tolist()}")
    logm = math.log(level_ratio)
    logv = np.log(v)
    K2_fit = math.exp(float(np.mean(logv + lv * logm)))
    decay = float(np.polyfit(lv, logv / logm, 1)[0])
    K2 = K2_fit
    if level0_variance is not None:
        if not level0_variance > 0:
            raise ValueError(f"level-0 variance must be positive, got {level0_variance}")
        K2 = max(K2, float(level0_variance))
    K0 = K2_fit / (2.0 * lipschitz**2 * (1.0 + level_ratio))
    cal = Calibration(K0, K2, decay, tuple(lv.astype(int).tolist()), tuple(v.tolist()), K2_fit,
                      level0_variance)
    if not cal.decay_ok:
        warnings.warn(f"variance decay exponent {decay:.3f} outside {DECAY_BAND}", stacklevel=2)
    return cal


def calibrate_constants(model: RegimeModel, driver: Optional[JumpDriver], phi: Functional,
                        pilot_levels, pilot_samples: int, root_seed: int, horizon: float = 5.0,
                        base_step: float = 0.25, level_ratio: int = 2, workers: int = 1,
                        tag: int = 99) -> Calibration:
    """Estimate K0, K2 from pilot variances.

    Levels >= 1 give corrector variances for the fit (at least two needed);
    level 0, if listed, gives Var phi(X) which K2 must also bound.
    """
    levels = sorted(set(int(l) for l in pilot_levels))
    if min(levels) < 0:
        raise ValueError("pilot levels must be nonnegative")
    fine = [l for l in levels if l >= 1]
    if len(fine) < 2:
        raise ValueError("need at least two distinct pilot levels >= 1")
    if pilot_samples < 2:
        raise ValueError("pilot_samples must be >= 2")
    var = {}
    for l in levels:
        y, _, _, _ = _level_correctors(model, driver, phi, l, pilot_samples, horizon, base_step,
                                       level_ratio, root_seed, tag, workers)
        var[l] = _mean_var(y)[1]
    return fit_variance_constants(fine, [var[l] for l in fine], level_ratio, phi.lipschitz_const,
                                  var.get(0))


def default_k1(phi: Functional, x0, stationary_second_moment: float) -> float:
    """2 Lphi (|x0| + sqrt(E|Y|^2)) for a guess of the stationary second moment."""
    if stationary_second_moment < 0:
        raise ValueError("second moment must be nonnegative")
    return 2.0 * phi.lipschitz_const * (float(np.linalg.norm(x0)) + math.sqrt(stationary_second_moment))
