"""Run configuration for the command-line front end.

A configuration is a JSON object whose keys are the fields of
:class:`RunConfig`; every key is optional and the defaults reproduce the
benchmark experiments.  Command-line flags override file values.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import builtin_functionals
from .model import RegimeModel, benchmark_model, linear_model, ou_model, zero_model
from .noise import bilateral_gamma, compound_poisson

__all__ = ["ConfigError", "RunConfig", "load_config", "MODELS", "DRIVERS"]

MODELS = ("benchmark", "ou", "linear", "zero")
DRIVERS = ("compound_poisson", "bilateral_gamma", "none")

# default sample counts of the strong-error tables per driver
_TABLE_SAMPLES = {"compound_poisson": 10_000, "bilateral_gamma": 4_000, "none": 10_000}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    model: str = "benchmark"
    generator: Optional[list] = None
    h0: Optional[float] = None
    x0: Optional[list] = None
    driver: str = "compound_poisson"
    driver_params: dict = field(default_factory=dict)
    base_step: float = 0.25
    level_ratio: int = 2
    # path and pilot horizon; the strong-error study uses ``horizons``
    horizon: float = 5.0
    path_level: int = 0
    horizons: list = field(default_factory=lambda: [5.0, 10.0])
    levels: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    samples: Optional[int] = None
    functional: str = "phi1"
    epsilon: float = 0.05
    # None: eps0 = sqrt(K2), then halved once per repetition count
    epsilons: Optional[list] = None
    repetitions: list = field(default_factory=lambda: [32, 16, 8, 4, 2])
    alpha: Optional[float] = None
    K0: Optional[float] = None
    K1: Optional[float] = None
    K2: Optional[float] = None
    stationary_second_moment: float = 3.0
    pilot_levels: list = field(default_factory=lambda: [0, 1, 2, 3, 4, 5])
    pilot_samples: int = 2000
    max_failure_rate: float = 0.01
    probe_points: int = 2000
    probe_radius: float = 3.0
    seed: int = 2024
    workers: int = 1
    out: str = "results"

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def replace(self, **overrides) -> "RunConfig":
        data = dataclasses.asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError("model", f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.driver not in DRIVERS:
            raise ConfigError("driver", f"unknown driver {self.driver!r}; choose from {', '.join(DRIVERS)}")
        if self.functional not in builtin_functionals():
            raise ConfigError("functional", f"unknown functional {self.functional!r}")
        if not isinstance(self.driver_params, dict):
            raise ConfigError("driver_params", "must be an object")
        _require("base_step", self.base_step, lambda v: 0 < v < 1, "must lie in (0, 1)")
        _require("level_ratio", self.level_ratio, lambda v: int(v) == v and v >= 2, "must be an integer >= 2")
        _require("horizon", self.horizon, lambda v: v > 0, "must be positive")
        _require("path_level", self.path_level, lambda v: int(v) == v and v >= 0, "must be a nonnegative integer")
        if self.h0 is not None:
            _require("h0", self.h0, lambda v: v > 0, "must be positive")
        _require("epsilon", self.epsilon, lambda v: v > 0, "must be positive")
        if not self.horizons or any(not _num(t) or t <= 0 for t in self.horizons):
            raise ConfigError("horizons", "must be a nonempty list of positive numbers")
        lv = self.levels
        if (len(lv) < 2 or any(int(v) != v for v in lv) or min(lv) < 1
                or any(b - a != 1 for a, b in zip(lv, lv[1:]))):
            raise ConfigError("levels", "must list at least two consecutive integers >= 1")
        if self.samples is not None:
            _require("samples", self.samples, lambda v: int(v) == v and v >= 2, "must be an integer >= 2")
        if self.epsilons is not None:
            if len(self.epsilons) < 2 or any(not _num(e) or e <= 0 for e in self.epsilons):
                raise ConfigError("epsilons", "must list at least two positive values")
            if len(set(self.epsilons)) != len(self.epsilons):
                raise ConfigError("epsilons", "values must be distinct")
        n_eps = len(self.repetitions) if self.epsilons is None else len(self.epsilons)
        if (len(self.repetitions) != n_eps or len(self.repetitions) < 2
                or any(not _num(r) or int(r) != r or r < 2 for r in self.repetitions)):
            raise ConfigError("repetitions", "need at least two entries, one integer >= 2 per epsilon")
        if self.alpha is not None:
            _require("alpha", self.alpha, lambda v: v < 0, "must be negative")
        for name in ("K0", "K1", "K2"):
            v = getattr(self, name)
            if v is not None:
                _require(name, v, lambda v: v > 0, "must be positive")
        _require("stationary_second_moment", self.stationary_second_moment, lambda v: v >= 0,
                 "must be nonnegative")
        pl = self.pilot_levels
        if any(int(v) != v or v < 0 for v in pl) or len({v for v in pl if v >= 1}) < 2:
            raise ConfigError("pilot_levels", "need nonnegative integers with at least two distinct values >= 1")
        _require("pilot_samples", self.pilot_samples, lambda v: int(v) == v and v >= 2, "must be an integer >= 2")
        _require("max_failure_rate", self.max_failure_rate, lambda v: 0 <= v <= 1, "must lie in [0, 1]")
        _require("probe_points", self.probe_points, lambda v: int(v) == v and v >= 1, "must be a positive integer")
        _require("probe_radius", self.probe_radius, lambda v: v > 0, "must be positive")
        _require("seed", self.seed, lambda v: int(v) == v and v >= 0, "must be a nonnegative integer")
        _require("workers", self.workers, lambda v: int(v) == v and v >= 1, "must be a positive integer")
        # building the objects checks generator, x0 and driver parameters
        self.build_model()
        self.build_driver()

    # -- objects ------------------------------------------------------------

    def build_model(self) -> RegimeModel:
        kw = {}
        if self.h0 is not None:
            kw["taming_base"] = float(self.h0)
        try:
            if self.model == "benchmark":
                m = benchmark_model(generator=self.generator, **kw)
            else:
                if self.generator is not None:
                    raise ConfigError("generator", f"model {self.model!r} has a single regime")
                dim = 1 if self.model == "linear" else 3
                x0 = None if self.x0 is None else np.asarray(self.x0, dtype=float)
                if x0 is not None and x0.shape != (dim,):
                    raise ConfigError("x0", f"must have {dim} entries")
                m = {"ou": ou_model, "linear": linear_model, "zero": zero_model}[self.model](x0=x0, **kw)
                return m
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("generator", str(exc)) from exc
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float)
            if x0.shape != (m.dim,):
                raise ConfigError("x0", f"must have {m.dim} entries")
            m = dataclasses.replace(m, x0=x0)
        return m

    def build_driver(self):
        if self.driver == "none":
            if self.driver_params:
                raise ConfigError("driver_params", "driver 'none' takes no parameters")
            return None
        dim = 1 if self.model == "linear" else 3
        factory = compound_poisson if self.driver == "compound_poisson" else bilateral_gamma
        try:
            return factory(dim=dim, **self.driver_params)
        except TypeError as exc:
            raise ConfigError("driver_params", str(exc)) from exc
        except ValueError as exc:
            raise ConfigError("driver_params", str(exc)) from exc

    def build_functional(self):
        dim = 1 if self.model == "linear" else 3
        return builtin_functionals(dim)[self.functional]

    @property
    def table_samples(self) -> int:
        return int(self.samples) if self.samples is not None else _TABLE_SAMPLES[self.driver]

    def epsilon_grid(self, K2: float) -> list:
        """Configured eps list, or sqrt(K2) halved once per repetition count."""
        if self.epsilons is not None:
            return [float(e) for e in self.epsilons]
        return [math.sqrt(K2) * 2.0 ** -k for k in range(len(self.repetitions))]

    @property
    def contraction_rate(self) -> float:
        alpha = self.build_model().contraction_rate if self.alpha is None else self.alpha
        if not alpha < 0:
            raise ConfigError("alpha", f"model {self.model!r} declares no negative contraction rate")
        return float(alpha)


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _require(name, value, check, message):
    if not _num(value) or not check(value):
        raise ConfigError(name, f"{message}, got {value!r}")


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    return RunConfig.from_dict(data)
