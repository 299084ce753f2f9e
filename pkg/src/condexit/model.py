"""Model parameters, the smooth initial density and run configuration."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate

from .errors import ParameterError, UsageError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


@dataclass(frozen=True)
class ModelParams:
    """Diffusion of the hidden noise (``sigma1``) and of the observation (``sigma``).

    ``sigma = 0`` is accepted only through :meth:`decoupled`; it is the control
    case in which the density no longer feels the observation path.
    """

    sigma1: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma1) and self.sigma1 > 0):
            raise ParameterError(f"sigma1 must be finite and > 0, got {self.sigma1!r}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ParameterError(f"sigma must be finite and >= 0, got {self.sigma!r}")

    @property
    def a(self) -> float:
        return self.sigma1**2 + self.sigma**2

    @property
    def eps(self) -> float:
        return self.sigma1 / self.sigma if self.sigma > 0 else math.inf

    @property
    def gap(self) -> float:
        """Stochastic parabolicity margin ``2a - sigma^2``."""
        return 2.0 * self.a - self.sigma**2

    @classmethod
    def decoupled(cls, sigma1: float) -> "ModelParams":
        return cls(float(sigma1), 0.0)

    @classmethod
    def from_eps(cls, eps: float, sigma: float = 1.0) -> "ModelParams":
        return derive_constants(eps * sigma, sigma)

    def to_dict(self) -> dict[str, float]:
        return {"sigma1": self.sigma1, "sigma": self.sigma}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        d = json.loads(text)
        return cls(float(d["sigma1"]), float(d["sigma"]))


def derive_constants(sigma1: float, sigma: float) -> ModelParams:
    """Validate ``(sigma1, sigma)`` and return the parameter object.

    Both values must be finite and strictly positive.
    """
    for name, v in (("sigma1", sigma1), ("sigma", sigma)):
        if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v) or v <= 0:
            raise ParameterError(f"{name} must be finite and > 0, got {v!r}")
    return ModelParams(float(sigma1), float(sigma))


def _unit_bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ri * ri))
    return out


@dataclass(frozen=True)
class InitialDensity:
    """Normalised smooth bump ``x -> normalization * exp(-1/(1 - ((x-center)/radius)^2))``."""

    center: float
    radius: float
    normalization: float

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.radius, self.center + self.radius)

    @property
    def peak(self) -> float:
        return self.normalization * math.exp(-1.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.normalization * _unit_bump((x - self.center) / self.radius)

    def sample_grid(self, level: int) -> np.ndarray:
        x = np.linspace(0.0, 1.0, 2**level + 1)
        v = self(x)
        v[0] = v[-1] = 0.0
        return v


_BUMP_CACHE: dict[tuple[float, float], float] = {}


def bump_density(center: float = 0.5, radius: float = 0.25) -> InitialDensity:
    """Smooth compactly supported probability density on ``(0, 1)``."""
    if not (radius > 0 and center - radius > 0 and center + radius < 1):
        raise ParameterError(
            f"bump support [{center - radius}, {center + radius}] must lie inside (0, 1)"
        )
    key = (float(center), float(radius))
    if key not in _BUMP_CACHE:
        mass, _ = integrate.quad(
            lambda r: math.exp(-1.0 / (1.0 - r * r)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200
        )
        _BUMP_CACHE[key] = 1.0 / (radius * mass)
    return InitialDensity(float(center), float(radius), _BUMP_CACHE[key])


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs besides the random paths themselves.

    Keys are flat; a TOML file may group them in tables for readability but
    every key name is unique and doubles as a CLI flag.
    """

    sigma1: float = 0.5
    sigma: float = 1.0
    bump_center: float = 0.5
    bump_radius: float = 0.25
    level_space: int = 9
    level_time: int = 0  # 0: pick the smallest level meeting the step rules
    output_level: int = 12
    horizon: float = 0.25
    seed: int = 20240601
    n_seeds: int = 1
    replicas_particles: int = 100_000
    replicas_frontier: int = 100_000
    replicas_bounds: int = 100_000
    particle_level: int = 12
    frontier_level: int = 12
    clamp_tol: float = 1e-6
    resolution: float = 1.0  # sigma1 sqrt(dt) / dx when the time level is automatic
    mass_tol: float = 1e-10
    bound_c: float = 40.0
    bound_d: float = 1.0
    bound_delta: float = 1.0
    bound_mu: float = 0.0
    lemma_gamma: float = 0.5
    lemma_beta: float = 8.0
    lemma_K: int = 60
    lemma_seeds: int = 10_000
    x_points: int = 33

    def __post_init__(self):
        if not self.horizon > 0:
            raise ParameterError("horizon must be > 0")
        if self.level_space < 4 or (self.level_time and self.level_time < 4):
            raise ParameterError("grid levels must be >= 4")
        for k in ("replicas_particles", "replicas_frontier", "replicas_bounds", "n_seeds", "lemma_seeds"):
            if getattr(self, k) < 1:
                raise ParameterError(f"{k} must be >= 1")

    @property
    def params(self) -> ModelParams:
        if self.sigma == 0:
            return ModelParams.decoupled(self.sigma1)
        return derive_constants(self.sigma1, self.sigma)

    @property
    def pi0(self) -> InitialDensity:
        return bump_density(self.bump_center, self.bump_radius)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


CONFIG_KEYS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value: Any) -> Any:
    default = getattr(RunConfig, key)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise UsageError(f"config key {key!r} expects an integer, got {value!r}")
        return int(value)
    return float(value)


def flatten_config(data: dict[str, Any]) -> dict[str, Any]:
    """Flatten one level of TOML tables into a single key space."""
    flat: dict[str, Any] = {}
    for k, v in data.items():
        items = v.items() if isinstance(v, dict) else [(k, v)]
        for kk, vv in items:
            if kk not in CONFIG_KEYS:
                raise UsageError(f"unknown config key {kk!r}")
            if kk in flat:
                raise UsageError(f"config key {kk!r} given twice")
            flat[kk] = _coerce(kk, vv)
    return flat


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a TOML config file, then apply ``overrides`` (same key names)."""
    values: dict[str, Any] = {}
    if path is not None:
        with open(path, "rb") as fh:
            values.update(flatten_config(tomllib.load(fh)))
    for k, v in (overrides or {}).items():
        if k not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {k!r}")
        if v is not None:
            values[k] = _coerce(k, v)
    return RunConfig(**values)
