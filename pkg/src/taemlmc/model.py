"""Regime-switching jump SDE models.

A model is a set of per-regime coefficients ``b``, ``sigma``, ``gamma`` plus the
generator of the switching chain and the structural constants the scheme and
the planner rely on.  Coefficients are supplied as numba-compilable kernels
with the in-place signature ``kernel(regime, x, out)``; regimes are numbered
``1..N``.  Plain Python functions are compiled on construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

__all__ = [
    "RegimeModel",
    "Functional",
    "ConditionReport",
    "ConditionError",
    "benchmark_model",
    "zero_model",
    "linear_model",
    "ou_model",
    "probe_conditions",
    "BENCHMARK_GENERATOR",
    "BENCHMARK_TAMING_BASE",
]


class ConditionError(ValueError):
    """Raised when a coefficient evaluates to a non-finite value."""


def _as_kernel(fn):
    if isinstance(fn, numba.core.registry.CPUDispatcher):
        return fn
    return numba.njit(nogil=True)(fn)


def _validate_generator(generator) -> np.ndarray:
    g = np.atleast_2d(np.asarray(generator, dtype=float))
    if g.shape[0] != g.shape[1]:
        raise ValueError(f"generator must be square, got shape {g.shape}")
    off = g[~np.eye(g.shape[0], dtype=bool)]
    if np.any(off < 0):
        raise ValueError("generator off-diagonal entries must be nonnegative")
    # rows must sum to zero; the diagonal is recomputed so that holds to rounding
    rowsum = g.sum(axis=1)
    scale = np.maximum(1.0, np.abs(g).max(axis=1))
    if np.any(np.abs(rowsum) > 1e-9 * scale):
        raise ValueError(f"generator rows must sum to 0, got row sums {rowsum}")
    g = g.copy()
    np.fill_diagonal(g, 0.0)
    np.fill_diagonal(g, -g.sum(axis=1))
    g.setflags(write=False)
    return g


@dataclass(frozen=True)
class RegimeModel:
    """SDE with Markovian switching driven by W and a centered pure-jump Z.

    ``dX = b(theta, X) dt + sigma(theta, X) dW + gamma(theta-, X-) dZ``

    The numeric metadata (growth exponents, dissipativity and contraction
    constants) is declared by the caller; :func:`probe_conditions` spot-checks
    it on sampled points.
    """

    dim: int
    generator: np.ndarray
    drift_kernel: Callable
    diffusion_kernel: Callable
    jump_kernel: Callable
    drift_growth: float = 1.0
    diffusion_growth: float = 0.0
    moment_order: float = 2.0
    dissipativity: tuple[float, float] = (0.0, 0.0)
    contraction_rate: float = 0.0
    condition_epsilon: float = 0.0
    taming_base: float = 1.0
    lipschitz_bounds: tuple[float, float, float] = (1.0, 1.0, 1.0)
    x0: Optional[np.ndarray] = None
    name: str = "custom"
    jump_at_origin: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        object.__setattr__(self, "generator", _validate_generator(self.generator))
        for attr in ("drift_kernel", "diffusion_kernel", "jump_kernel"):
            object.__setattr__(self, attr, _as_kernel(getattr(self, attr)))
        if self.drift_growth < 1:
            raise ValueError("drift_growth l must be >= 1")
        if self.diffusion_growth < 0:
            raise ValueError("diffusion_growth m must be >= 0")
        if self.moment_order < 2:
            raise ValueError("moment_order p0 must be >= 2")
        if self.dissipativity[1] < 0:
            raise ValueError("dissipativity zeta1 must be >= 0")
        if self.taming_base <= 0:
            raise ValueError("taming_base h0 must be positive")
        if self.condition_epsilon < 0:
            raise ValueError("condition_epsilon must be nonnegative")
        x0 = np.zeros(self.dim) if self.x0 is None else np.asarray(self.x0, dtype=float)
        if x0.shape != (self.dim,):
            raise ValueError(f"x0 must have shape ({self.dim},)")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        origin = np.zeros(self.dim)
        total = sum(
            np.linalg.norm(self.jump_coeff(i, origin)) for i in self.regimes
        )
        object.__setattr__(self, "jump_at_origin", float(total))

    @property
    def num_regimes(self) -> int:
        return self.generator.shape[0]

    @property
    def regimes(self) -> range:
        return range(1, self.num_regimes + 1)

    @property
    def L0(self) -> float:
        """max{3 L3, sum_i |gamma(i, 0)|}; linear growth constant of gamma."""
        return max(3.0 * self.lipschitz_bounds[2], self.jump_at_origin)

    def _check_regime(self, i: int) -> int:
        if i not in self.regimes:
            raise ValueError(f"regime {i} outside 1..{self.num_regimes}")
        return int(i)

    def _point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"point must have shape ({self.dim},), got {x.shape}")
        return x

    def drift(self, i: int, x) -> np.ndarray:
        out = np.zeros(self.dim)
        self.drift_kernel(self._check_regime(i), self._point(x), out)
        return out

    def diffusion(self, i: int, x) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        self.diffusion_kernel(self._check_regime(i), self._point(x), out)
        return out

    def jump_coeff(self, i: int, x) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        self.jump_kernel(self._check_regime(i), self._point(x), out)
        return out


@dataclass(frozen=True)
class Functional:
    """Test function phi applied row-wise to an ``(n, d)`` array of states.

    ``lipschitz_const`` is the constant L_phi used by the planner.  For a
    functional that is not globally Lipschitz it is a local surrogate and
    ``globally_lipschitz`` is False.
    """

    map: Callable[[np.ndarray], np.ndarray]
    lipschitz_const: float
    name: str
    globally_lipschitz: bool = True
    dim: Optional[int] = None

    def __post_init__(self):
        if not self.lipschitz_const > 0:
            raise ValueError("lipschitz_const must be positive")

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim is not None and x.shape[1] != self.dim:
            raise ValueError(
                f"functional {self.name} expects dimension {self.dim}, got {x.shape[1]}"
            )
        return np.asarray(self.map(x), dtype=float)


# ---------------------------------------------------------------------------
# Built-in models


@numba.njit(nogil=True)
def _bench_drift(i, x, out):
    c = 1.0 if i == 1 else 2.0
    for k in range(3):
        out[k] = c - x[k] - x[k] ** 3


@numba.njit(nogil=True)
def _bench_diffusion(i, x, out):
    out[:, :] = 0.0
    if i == 1:
        out[0, 0] = 0.3 * x[1] ** 2
        out[1, 1] = 0.3 * x[2] ** 2
        out[2, 2] = 0.3 * x[0] ** 2
    else:
        out[0, 0] = 0.3 * x[0] ** 2
        out[1, 1] = 0.3 * x[1] ** 2
        out[2, 2] = 0.3 * x[2] ** 2


@numba.njit(nogil=True)
def _bench_jump(i, x, out):
    out[:, :] = 0.0
    if i == 1:
        out[0, 0] = 0.2 * x[0]
        out[1, 1] = 0.2 * (x[1] + math.sin(x[2]))
        out[2, 2] = 0.2 * math.cos(x[2])
    else:
        out[0, 0] = 0.2 * math.cos(x[2])
        out[1, 1] = 0.2 * x[0]
        out[2, 2] = 0.2 * (x[1] + math.sin(x[2]))


BENCHMARK_GENERATOR = np.array([[-1.0, 1.0], [1.0, -1.0]])

# Step-size scale for the benchmark experiments.  With h0 = 16 the coarsest
# strong-error entry (step 1/4 vs 1/8, finite activity, T = 5) sits near
# log2 MSE = -9.2.
BENCHMARK_TAMING_BASE = 16.0


def benchmark_model(generator=None, taming_base: float = BENCHMARK_TAMING_BASE) -> RegimeModel:
    """Three-dimensional two-regime model with cubic drift.

    ``b(i, x) = c_i - x - x**3`` componentwise with ``c = (1, 2)``; squared-
    coordinate diagonal diffusions scaled by 0.3 and sin/cos diagonal jump
    coefficients scaled by 0.2.  Starts at the origin.
    """
    return RegimeModel(
        dim=3,
        generator=BENCHMARK_GENERATOR if generator is None else generator,
        drift_kernel=_bench_drift,
        diffusion_kernel=_bench_diffusion,
        jump_kernel=_bench_jump,
        drift_growth=2.0,
        diffusion_growth=1.0,
        moment_order=10.0,
        # zeta1 is sized for the compound Poisson driver, whose jump term makes
        # the largest demand (a numeric supremum of about 790)
        dissipativity=(-1.0, 800.0),
        contraction_rate=-1.0,
        condition_epsilon=1.0,
        taming_base=taming_base,
        # |b(x)-b(y)| <= 1.5(1+|x|^2+|y|^2)|x-y|, |sigma(x)-sigma(y)| <= 0.3(|x|+|y|)|x-y|,
        # |gamma(x)-gamma(y)| <= 0.2*sqrt(3)|x-y|
        lipschitz_bounds=(1.5, 0.3, 0.2 * math.sqrt(3.0)),
        name="benchmark",
    )


@numba.njit(nogil=True)
def _zero_vec(i, x, out):
    out[:] = 0.0


@numba.njit(nogil=True)
def _zero_mat(i, x, out):
    out[:, :] = 0.0


def zero_model(dim: int = 3, num_regimes: int = 1, x0=None, taming_base: float = 1.0) -> RegimeModel:
    """b = sigma = gamma = 0: every path stays at x0."""
    g = np.zeros((num_regimes, num_regimes))
    if num_regimes > 1:
        g = np.ones((num_regimes, num_regimes))
        np.fill_diagonal(g, 1.0 - num_regimes)
    return RegimeModel(
        dim=dim,
        generator=g,
        drift_kernel=_zero_vec,
        diffusion_kernel=_zero_mat,
        jump_kernel=_zero_mat,
        x0=x0,
        taming_base=taming_base,
        name="zero",
    )


@numba.njit(nogil=True)
def _neg_identity(i, x, out):
    for k in range(x.shape[0]):
        out[k] = -x[k]


def linear_model(dim: int = 1, x0=None, taming_base: float = 1.0) -> RegimeModel:
    """Deterministic dX = -X dt (single regime, no noise)."""
    return RegimeModel(
        dim=dim,
        generator=np.zeros((1, 1)),
        drift_kernel=_neg_identity,
        diffusion_kernel=_zero_mat,
        jump_kernel=_zero_mat,
        dissipativity=(-1.0, 0.0),
        contraction_rate=-2.0,
        lipschitz_bounds=(1.0, 0.0, 0.0),
        x0=np.ones(dim) if x0 is None else x0,
        taming_base=taming_base,
        name="linear",
    )


def ou_model(dim: int = 3, noise: float = 0.5, x0=None, taming_base: float = 1.0) -> RegimeModel:
    """Ornstein-Uhlenbeck test model dX = -X dt + noise dW, one regime.

    The invariant law is N(0, noise**2/2 I).
    """

    @numba.njit(nogil=True)
    def diffusion(i, x, out):
        out[:, :] = 0.0
        for k in range(x.shape[0]):
            out[k, k] = noise

    return RegimeModel(
        dim=dim,
        generator=np.zeros((1, 1)),
        drift_kernel=_neg_identity,
        diffusion_kernel=diffusion,
        jump_kernel=_zero_mat,
        dissipativity=(-1.0, 0.5 * dim * noise**2),
        contraction_rate=-2.0,
        lipschitz_bounds=(1.0, 0.0, 0.0),
        x0=x0,
        taming_base=taming_base,
        name="ou",
    )


# ---------------------------------------------------------------------------
# Numeric probes of the dissipativity and contraction conditions


@dataclass
class ConditionReport:
    """Outcome of :func:`probe_conditions`.

    ``zeta1_required`` is the smallest zeta1 that makes the dissipativity
    inequality hold on the cloud with the declared zeta0; ``zeta0_bound`` the
    smallest zeta0 that works with the declared zeta1.  ``alpha_bound`` is the
    largest contraction ratio seen over the pairs.
    """

    zeta0_bound: float
    zeta1_required: float
    alpha_bound: float
    max_gamma_growth: float
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def _finite_or_raise(value, what, regime, x):
    if not np.all(np.isfinite(value)):
        raise ConditionError(f"non-finite {what} at regime {regime}, x = {np.asarray(x).tolist()}")
    return value


def probe_conditions(model: RegimeModel, cloud, pairs, driver=None, tol: float = 1e-9) -> ConditionReport:
    """Evaluate the dissipativity and contraction inequalities on samples.

    ``driver`` supplies the Levy measure for the jump terms; without one the
    jump terms are taken as zero.
    """
    from .noise import levy_integral, levy_moment

    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    pairs = np.asarray(pairs, dtype=float)
    if cloud.size == 0 or pairs.size == 0:
        raise ValueError("cloud and pairs must be nonempty")
    if pairs.ndim == 2:
        pairs = pairs[None]
    zeta0, zeta1 = model.dissipativity
    p0 = model.moment_order
    L0 = model.L0

    if driver is None or L0 == 0:
        jump5 = 0.0
    else:
        jump5 = levy_integral(driver, lambda r: r * ((1.0 + L0 * r) ** (p0 - 1.0) - 1.0)) / (2.0 * L0)
    jump6 = 0.0 if driver is None else levy_moment(driver, 2.0)

    zeta0_bound = -np.inf
    zeta1_required = 0.0
    gamma_growth = 0.0
    for x in cloud:
        r2 = float(x @ x)
        for i in model.regimes:
            b = _finite_or_raise(model.drift(i, x), "drift", i, x)
            s = _finite_or_raise(model.diffusion(i, x), "diffusion", i, x)
            g = _finite_or_raise(model.jump_coeff(i, x), "jump coefficient", i, x)
            lhs = float(x @ b) + 0.5 * (p0 - 1.0) * float(np.sum(s * s)) + jump5 * float(np.sum(g * g))
            zeta1_required = max(zeta1_required, lhs - zeta0 * r2)
            if r2 > 0:
                zeta0_bound = max(zeta0_bound, (lhs - zeta1) / r2)
            elif lhs > zeta1 + tol:
                zeta0_bound = np.inf
            gamma_growth = max(gamma_growth, float(np.linalg.norm(g)) / (1.0 + math.sqrt(r2)))

    alpha_bound = -np.inf
    eps = model.condition_epsilon
    for x, y in pairs:
        dx = x - y
        d2 = float(dx @ dx)
        if d2 == 0:
            continue
        for i in model.regimes:
            db = _finite_or_raise(model.drift(i, x), "drift", i, x) - model.drift(i, y)
            ds = _finite_or_raise(model.diffusion(i, x), "diffusion", i, x) - model.diffusion(i, y)
            dg = _finite_or_raise(model.jump_coeff(i, x), "jump coefficient", i, x) - model.jump_coeff(i, y)
            lhs = 2.0 * float(dx @ db) + (1.0 + eps) * float(np.sum(ds * ds)) + jump6 * float(np.sum(dg * dg))
            alpha_bound = max(alpha_bound, lhs / d2)

    violations = []
    if zeta1_required > zeta1 + tol:
        violations.append(
            f"dissipativity: declared zeta1={zeta1} but samples need {zeta1_required:.6g} with zeta0={zeta0}"
        )
    if alpha_bound > model.contraction_rate + tol:
        violations.append(
            f"contraction: declared alpha={model.contraction_rate} but samples show {alpha_bound:.6g}"
        )
    if gamma_growth > model.L0 + tol:
        violations.append(f"jump growth: |gamma|/(1+|x|) reaches {gamma_growth:.6g} > L0={model.L0:.6g}")
    return ConditionReport(float(zeta0_bound), float(zeta1_required), float(alpha_bound), gamma_growth, violations)
