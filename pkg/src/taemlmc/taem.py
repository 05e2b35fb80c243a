"""Tamed-adaptive Euler-Maruyama scheme: single paths and coupled pairs.

The step taken from state x is ``h(x) * Delta`` with

    h(x) = h0 / ((1 + sum_i |b(i,x)|^2 + sum_i |sigma(i,x)| + |x|^l)^2
                 + (sum_i |gamma(i,x)|)^p0)

and the diffusion and jump coefficients are tamed at scale Delta.  The last
step is clamped so every path ends exactly at the horizon.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _stepper
from .model import ConditionError, RegimeModel
from .noise import NO_JUMPS, JumpDriver, Streams, make_streams

__all__ = [
    "TaemConfig",
    "PathResult",
    "CoupledSample",
    "SimulationError",
    "BatchResult",
    "step_size",
    "tamed_diffusion",
    "tamed_jump",
    "simulate_terminal",
    "simulate_coupled_pair",
    "simulate_synchronous",
    "run_batch",
    "write_skeleton_csv",
]


class SimulationError(RuntimeError):
    def __init__(self, message, status=None, level=None, sample=None):
        super().__init__(message)
        self.status = status
        self.level = level
        self.sample = sample


@dataclass(frozen=True)
class TaemConfig:
    """Level family Delta_l = base_step * level_ratio**-l on [0, horizon]."""

    base_step: float = 0.25
    level_ratio: int = 2
    horizon: float = 5.0

    def __post_init__(self):
        if not 0 < self.base_step < 1:
            raise ValueError(f"base_step must lie in (0, 1), got {self.base_step}")
        if int(self.level_ratio) != self.level_ratio or self.level_ratio < 2:
            raise ValueError(f"level_ratio must be an integer >= 2, got {self.level_ratio}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    def delta(self, level: int) -> float:
        return self.base_step * float(self.level_ratio) ** (-level)


@dataclass
class PathResult:
    terminal: np.ndarray
    steps: int
    times: Optional[np.ndarray] = None
    regimes: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None


@dataclass
class CoupledSample:
    fine: np.ndarray
    coarse: np.ndarray
    fine_steps: int
    coarse_steps: int
    checksum: float
    # filled only when recorded: per-level grid (times, Brownian increments)
    # and the merged Brownian sub-draws
    trace: Optional[dict] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# pointwise pieces


def _coefficients(model: RegimeModel, x):
    x = np.ascontiguousarray(x, dtype=float)
    n, d = model.num_regimes, model.dim
    B, S, G = np.zeros((n, d)), np.zeros((n, d, d)), np.zeros((n, d, d))
    _stepper.eval_all(model.drift_kernel, model.diffusion_kernel, model.jump_kernel, n, x, B, S, G)
    for arr, what in ((B, "drift"), (S, "diffusion"), (G, "jump coefficient")):
        if not np.all(np.isfinite(arr)):
            raise ConditionError(f"non-finite {what} at x = {x.tolist()}")
    return x, B, S, G


def step_size(model: RegimeModel, x) -> float:
    """h(x); lies in (0, h0]."""
    x, B, S, G = _coefficients(model, x)
    norms = np.zeros((model.num_regimes, 3))
    _stepper.coefficient_norms(B, S, G, norms)
    return float(_stepper.step_from(x, norms, model.taming_base, model.drift_growth, model.moment_order))


def _tamed(model, delta, regime, x):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    x, B, S, G = _coefficients(model, x)
    norms = np.zeros((model.num_regimes, 3))
    _stepper.coefficient_norms(B, S, G, norms)
    r = model._check_regime(regime) - 1
    fs, fg = _stepper.taming_factors(norms, r, delta)
    return S[r] * fs, G[r] * fg


def tamed_diffusion(model: RegimeModel, delta: float, regime: int, x) -> np.ndarray:
    """sigma / (1 + sqrt(delta) |sigma|)."""
    return _tamed(model, delta, regime, x)[0]


def tamed_jump(model: RegimeModel, delta: float, regime: int, x) -> np.ndarray:
    """gamma / (1 + sqrt(delta) |gamma| (1 + |b|))."""
    return _tamed(model, delta, regime, x)[1]


# ---------------------------------------------------------------------------
# path simulation

_EMPTY = np.zeros(0)


def _driver_args(driver: Optional[JumpDriver], dim: int):
    if driver is None:
        return NO_JUMPS, np.zeros((dim, 4)), np.zeros(dim)
    if driver.dim != dim:
        raise ValueError(f"driver dimension {driver.dim} != model dimension {dim}")
    return driver.code, np.ascontiguousarray(driver.kernel_params()), np.ascontiguousarray(driver.compensator)


def _run(model, driver, deltas, x0s, horizon, streams: Streams, obs_times=_EMPTY, record=False,
         initial_regime=1):
    jkind, jparams, jcomp = _driver_args(driver, model.dim)
    args = (
        model.drift_kernel, model.diffusion_kernel, model.jump_kernel,
        np.ascontiguousarray(model.generator), int(initial_regime),
        float(model.taming_base), float(model.drift_growth), float(model.moment_order),
        np.ascontiguousarray(deltas, dtype=float), np.ascontiguousarray(x0s, dtype=float),
        float(horizon), jkind, jparams, jcomp,
        np.ascontiguousarray(obs_times, dtype=float),
        streams.chain, streams.brownian, streams.jump, bool(record),
    )
    cap = 4096
    saved = [g.bit_generator.state for g in streams] if record else None
    while True:
        out = _stepper.run(*args, cap)
        if out[0] != _stepper.OVERFLOW:
            break
        # rerun the same sample with larger recording buffers
        for g, st in zip(streams, saved):
            g.bit_generator.state = st
        cap *= 8
    status, lev = out[0], out[1]
    if status != _stepper.OK:
        what = "non-finite state" if status == _stepper.NON_FINITE else "step size underflow"
        raise SimulationError(
            f"{what} on copy {lev} after {int(out[3][lev])} steps", status=status, level=lev
        )
    return out


def simulate_terminal(model: RegimeModel, driver: Optional[JumpDriver], config: TaemConfig,
                      streams: Streams, level: int = 0, record: bool = False,
                      x0=None, delta: Optional[float] = None) -> PathResult:
    """One TAEM path to the horizon at step scale ``config.delta(level)``."""
    delta = config.delta(level) if delta is None else delta
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    out = _run(model, driver, [delta], x0[None, :], config.horizon, streams, record=record)
    res = PathResult(out[2][0].copy(), int(out[3][0]))
    if record:
        res.times, res.regimes, res.states = out[7], out[8], out[9]
    return res


def simulate_coupled_pair(model: RegimeModel, driver: Optional[JumpDriver], level: int,
                          config: TaemConfig, streams: Streams, record: bool = False) -> CoupledSample:
    """Fine (level) and coarse (level-1) paths sharing all driving noise."""
    if level < 1:
        raise ValueError("coupled pairs need level >= 1")
    deltas = [config.delta(level), config.delta(level - 1)]
    out = _run(model, driver, deltas, np.stack([model.x0, model.x0]), config.horizon, streams, record=record)
    x, steps = out[2], out[3]
    sample = CoupledSample(x[0].copy(), x[1].copy(), int(steps[0]), int(steps[1]), float(out[5]))
    if record:
        rec_lev, rec_t, rec_w = out[6], out[7], out[10]
        sample.trace = {
            "fine_times": rec_t[rec_lev == 0], "fine_increments": rec_w[rec_lev == 0],
            "coarse_times": rec_t[rec_lev == 1], "coarse_increments": rec_w[rec_lev == 1],
            "sub_times": out[11], "sub_draws": out[12],
        }
    return sample


def simulate_synchronous(model: RegimeModel, driver: Optional[JumpDriver], delta: float, x0, y0,
                         horizon: float, obs_times, streams: Streams) -> np.ndarray:
    """Two paths from x0 and y0 at the same step scale, sharing all noise.

    Returns the continuous extensions at ``obs_times``, shape (n_obs, 2, d).
    """
    obs = np.asarray(obs_times, dtype=float)
    if obs.size and (np.any(np.diff(obs) <= 0) or obs[0] < 0 or obs[-1] > horizon):
        raise ValueError("obs_times must be strictly increasing within [0, horizon]")
    out = _run(model, driver, [delta, delta], np.stack([np.asarray(x0, float), np.asarray(y0, float)]),
               horizon, streams, obs_times=obs)
    return out[4]


# ---------------------------------------------------------------------------
# batches


@dataclass
class BatchResult:
    """Terminal values of ``n`` independent samples (NaN rows for failures)."""

    values: np.ndarray          # (n, ncopies, d)
    steps: np.ndarray           # (n, ncopies)
    failed: np.ndarray          # (n,) bool
    errors: list[str]

    @property
    def failure_rate(self) -> float:
        return float(self.failed.mean()) if self.failed.size else 0.0


def run_batch(model: RegimeModel, driver: Optional[JumpDriver], deltas, n: int, horizon: float,
              root_seed: int, key: tuple, workers: int = 1, x0s=None) -> BatchResult:
    """Run ``n`` samples of ``len(deltas)`` coupled copies.

    Sample ``k`` uses streams keyed on ``key + (k,)``, so the output does not
    depend on ``workers``.
    """
    deltas = np.asarray(deltas, dtype=float)
    ncop = deltas.size
    x0s = np.stack([model.x0] * ncop) if x0s is None else np.asarray(x0s, dtype=float)
    values = np.full((n, ncop, model.dim), np.nan)
    steps = np.zeros((n, ncop), dtype=np.int64)
    failed = np.zeros(n, dtype=bool)
    errors: list[str] = [""] * n

    def work(lo, hi):
        for k in range(lo, hi):
            try:
                out = _run(model, driver, deltas, x0s, horizon, make_streams(root_seed, *key, k))
            except SimulationError as exc:
                failed[k] = True
                errors[k] = f"sample {k}: {exc}"
                continue
            values[k] = out[2]
            steps[k] = out[3]

    if workers <= 1 or n < 2 * workers:
        work(0, n)
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, bounds[:-1], bounds[1:]))
    return BatchResult(values, steps, failed, [e for e in errors if e])


def write_skeleton_csv(path, result: PathResult) -> None:
    """CSV with columns t, regime, x_1..x_d."""
    import csv

    if result.times is None:
        raise ValueError("path was not recorded")
    d = result.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "regime"] + [f"x_{i + 1}" for i in range(d)])
        for t, r, x in zip(result.times, result.regimes, result.states):
            w.writerow([repr(float(t)), int(r)] + [repr(float(v)) for v in x])
