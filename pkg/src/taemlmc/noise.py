"""Driving randomness: switching chain, Brownian increments, Levy jumps.

Every sample draws from its own :class:`Streams` triple (chain, Brownian,
jumps), keyed on ``(root seed, tag, level, sample index)`` through
:class:`numpy.random.SeedSequence`, so results do not depend on how samples
are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from scipy import integrate, special, stats

__all__ = [
    "CompoundPoisson",
    "BilateralGamma",
    "JumpDriver",
    "UnsupportedDriverError",
    "ChainPath",
    "JumpSchedule",
    "Streams",
    "make_streams",
    "compound_poisson",
    "bilateral_gamma",
    "sample_chain",
    "chain_state_at",
    "brownian_increment",
    "sample_jump_schedule",
    "gamma_jump_increment",
    "levy_moment",
    "levy_integral",
]

# driver codes understood by the compiled stepper
NO_JUMPS, FINITE_ACTIVITY, INFINITE_ACTIVITY = 0, 1, 2


class UnsupportedDriverError(ValueError):
    pass


def _per_component(value, dim, name, positive=False):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or (positive and np.any(arr <= 0)):
        raise ValueError(f"{name} must be {'positive' if positive else 'nonnegative'} and finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CompoundPoisson:
    """Independent compound Poisson components with Normal jump sizes."""

    dim: int
    intensity: np.ndarray
    jump_mean: np.ndarray
    jump_std: np.ndarray

    code = FINITE_ACTIVITY

    def __post_init__(self):
        object.__setattr__(self, "intensity", _per_component(self.intensity, self.dim, "intensity"))
        mean = np.broadcast_to(np.asarray(self.jump_mean, dtype=float), (self.dim,)).copy()
        if not np.all(np.isfinite(mean)):
            raise ValueError("jump_mean must be finite")
        mean.setflags(write=False)
        object.__setattr__(self, "jump_mean", mean)
        object.__setattr__(self, "jump_std", _per_component(self.jump_std, self.dim, "jump_std"))

    @property
    def compensator(self) -> np.ndarray:
        """Drift removed per unit time so that E[Z_t] = 0."""
        return self.intensity * self.jump_mean

    @property
    def centered(self) -> bool:
        return True

    @property
    def needs_compensation(self) -> bool:
        return bool(np.any(self.compensator != 0))

    def kernel_params(self) -> np.ndarray:
        return np.column_stack([self.intensity, self.jump_mean, self.jump_std, np.zeros(self.dim)])

    def describe(self) -> dict:
        return {
            "variant": "compound_poisson",
            "intensity": self.intensity.tolist(),
            "jump_mean": self.jump_mean.tolist(),
            "jump_std": self.jump_std.tolist(),
        }


@dataclass(frozen=True)
class BilateralGamma:
    """Independent bilateral Gamma components G+ - G-.

    ``rate`` parameters are inverse scales: G+ over a time step dt is
    Gamma(shape_pos * dt, scale=1/rate_pos).
    """

    dim: int
    shape_pos: np.ndarray
    rate_pos: np.ndarray
    shape_neg: np.ndarray
    rate_neg: np.ndarray

    code = INFINITE_ACTIVITY

    def __post_init__(self):
        for name in ("shape_pos", "shape_neg"):
            object.__setattr__(self, name, _per_component(getattr(self, name), self.dim, name))
        for name in ("rate_pos", "rate_neg"):
            object.__setattr__(self, name, _per_component(getattr(self, name), self.dim, name, positive=True))

    @property
    def compensator(self) -> np.ndarray:
        return self.shape_pos / self.rate_pos - self.shape_neg / self.rate_neg

    @property
    def centered(self) -> bool:
        return True

    @property
    def needs_compensation(self) -> bool:
        return bool(np.any(self.compensator != 0))

    def kernel_params(self) -> np.ndarray:
        return np.column_stack([self.shape_pos, self.rate_pos, self.shape_neg, self.rate_neg])

    def describe(self) -> dict:
        return {
            "variant": "bilateral_gamma",
            "shape_pos": self.shape_pos.tolist(),
            "rate_pos": self.rate_pos.tolist(),
            "shape_neg": self.shape_neg.tolist(),
            "rate_neg": self.rate_neg.tolist(),
            "rate_is_inverse_scale": True,
        }


JumpDriver = Union[CompoundPoisson, BilateralGamma]


def compound_poisson(dim: int = 3, intensity=10.0, jump_mean=0.0, jump_std=0.4) -> CompoundPoisson:
    return CompoundPoisson(dim, intensity, jump_mean, jump_std)


def bilateral_gamma(dim: int = 3, shape=1.0, rate=10.0, shape_neg=None, rate_neg=None) -> BilateralGamma:
    return BilateralGamma(
        dim,
        shape,
        rate,
        shape if shape_neg is None else shape_neg,
        rate if rate_neg is None else rate_neg,
    )


# ---------------------------------------------------------------------------
# Streams


class Streams(NamedTuple):
    chain: np.random.Generator
    brownian: np.random.Generator
    jump: np.random.Generator


def make_streams(root_seed: int, *key: int) -> Streams:
    """Independent Philox streams for one sample, keyed on ``key``."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(int(k) for k in key))
    return Streams(*(np.random.Generator(np.random.Philox(s)) for s in ss.spawn(3)))


# ---------------------------------------------------------------------------
# Markov chain


@dataclass(frozen=True)
class ChainPath:
    initial_state: int
    times: np.ndarray
    states: np.ndarray
    horizon: float

    @property
    def transitions(self) -> list[tuple[float, int]]:
        return list(zip(self.times.tolist(), self.states.tolist()))


def sample_chain(generator, initial_state: int, horizon: float, rng: np.random.Generator) -> ChainPath:
    """Sample the switching chain on [0, horizon].

    Draw order per transition (an exponential holding time, then a uniform
    choosing the next state) matches the compiled stepper, so the same stream
    reproduces the regimes a path saw.
    """
    g = np.atleast_2d(np.asarray(generator, dtype=float))
    n = g.shape[0]
    if not 1 <= initial_state <= n:
        raise ValueError(f"initial_state must lie in 1..{n}")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    times, states = [], []
    t, s = 0.0, initial_state - 1
    while True:
        rate = -g[s, s]
        if rate <= 0:
            break
        t += rng.standard_exponential() / rate
        if t > horizon:
            break
        s = _next_state(g, s, rng.random() * rate)
        times.append(t)
        states.append(s + 1)
    return ChainPath(initial_state, np.array(times, dtype=float), np.array(states, dtype=int), float(horizon))


def _next_state(g, s, u):
    acc = 0.0
    last = s
    for j in range(g.shape[0]):
        if j == s or g[s, j] <= 0:
            continue
        last = j
        acc += g[s, j]
        if u < acc:
            return j
    return last


def chain_state_at(path: ChainPath, t: float) -> int:
    """Right-continuous regime at time t."""
    if not 0.0 <= t <= path.horizon:
        raise ValueError(f"t={t} outside [0, {path.horizon}]")
    k = int(np.searchsorted(path.times, t, side="right"))
    return path.initial_state if k == 0 else int(path.states[k - 1])


# ---------------------------------------------------------------------------
# Increments


def brownian_increment(rng: np.random.Generator, dt: float, dim: int) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return rng.standard_normal(dim) * math.sqrt(dt)


@dataclass(frozen=True)
class JumpSchedule:
    """Jump times and sizes per component on (0, horizon]."""

    times: tuple[np.ndarray, ...]
    sizes: tuple[np.ndarray, ...]
    horizon: float
    compensator: np.ndarray

    def increment(self, s: float, t: float) -> np.ndarray:
        """Z_t - Z_s including the compensating drift."""
        out = np.empty(len(self.times))
        for j, (tj, zj) in enumerate(zip(self.times, self.sizes)):
            mask = (tj > s) & (tj <= t)
            out[j] = zj[mask].sum() - self.compensator[j] * (t - s)
        return out


def sample_jump_schedule(driver: JumpDriver, horizon: float, rng: np.random.Generator) -> JumpSchedule:
    if not isinstance(driver, CompoundPoisson):
        raise UnsupportedDriverError("jump schedules exist only for finite-activity drivers")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    times, sizes = [], []
    for j in range(driver.dim):
        n = rng.poisson(driver.intensity[j] * horizon) if horizon > 0 else 0
        times.append(np.sort(horizon - rng.uniform(0.0, horizon, n)))
        sizes.append(rng.normal(driver.jump_mean[j], driver.jump_std[j], n))
    return JumpSchedule(tuple(times), tuple(sizes), float(horizon), driver.compensator)


def gamma_jump_increment(driver: BilateralGamma, rng: np.random.Generator, dt: float) -> np.ndarray:
    if not isinstance(driver, BilateralGamma):
        raise UnsupportedDriverError("gamma increments need a bilateral Gamma driver")
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = np.empty(driver.dim)
    # same draw order as the compiled stepper: per component, G+ then G-
    for j in range(driver.dim):
        gp = rng.standard_gamma(driver.shape_pos[j] * dt) / driver.rate_pos[j]
        gm = rng.standard_gamma(driver.shape_neg[j] * dt) / driver.rate_neg[j]
        out[j] = gp - gm - driver.compensator[j] * dt
    return out


# ---------------------------------------------------------------------------
# Levy measure integrals. Components are independent, so the Levy measure
# lives on the coordinate axes and integrals of f(|z|) add over components.


def _normal_abs_moment(mean: float, std: float, p: float) -> float:
    if std == 0:
        return abs(mean) ** p
    if mean == 0:
        return std**p * 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)
    if p == 2:
        return mean**2 + std**2
    return float(stats.norm(mean, std).expect(lambda z: np.abs(z) ** p))


def levy_moment(driver: JumpDriver, p: float) -> float:
    """Closed form of the integral of |z|^p against the Levy measure."""
    if p < 1:
        raise ValueError(f"moment order p={p} must be >= 1")
    if isinstance(driver, CompoundPoisson):
        return float(sum(
            lam * _normal_abs_moment(m, s, p)
            for lam, m, s in zip(driver.intensity, driver.jump_mean, driver.jump_std)
            if lam > 0
        ))
    if isinstance(driver, BilateralGamma):
        g = special.gamma(p)
        return float(np.sum(driver.shape_pos * g / driver.rate_pos**p + driver.shape_neg * g / driver.rate_neg**p))
    raise UnsupportedDriverError(f"unknown driver {type(driver).__name__}")


def levy_integral(driver: JumpDriver, f) -> float:
    """Integral of f(|z|) against the Levy measure, by quadrature."""
    total = 0.0
    if isinstance(driver, CompoundPoisson):
        for lam, m, s in zip(driver.intensity, driver.jump_mean, driver.jump_std):
            if lam == 0:
                continue
            if s == 0:
                total += lam * f(abs(m))
                continue
            dens = stats.norm(m, s).pdf
            val, _ = integrate.quad(lambda z: f(abs(z)) * dens(z), -np.inf, np.inf)
            total += lam * val
        return float(total)
    if isinstance(driver, BilateralGamma):
        for a, b in list(zip(driver.shape_pos, driver.rate_pos)) + list(zip(driver.shape_neg, driver.rate_neg)):
            if a == 0:
                continue
            val, _ = integrate.quad(lambda z: f(z) * a * math.exp(-b * z) / z, 0.0, np.inf, limit=200)
            total += val
        return float(total)
    raise UnsupportedDriverError(f"unknown driver {type(driver).__name__}")
