"""Observation paths on dyadic grids.

A path at level ``L`` is built by the Levy-Ciesielski midpoint construction:
the endpoint ``b_T`` is drawn first, then each level inserts bridge midpoints
with one Philox substream per ``(seed, stream, level)``.  Sampling at level
``L`` and refining once is therefore bit-identical to sampling at ``L + 1``,
and dropping every other node of a level-``L`` path gives the level ``L - 1``
path exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from . import rng
from .errors import AlignmentError, DataError, ParameterError, ResourceError

MAX_LEVEL = 30


@nb.njit(cache=True)
def _insert_midpoints(values, seed, c2, c3, horizon, level):
    """Refine ``values`` (level ``level - 1``) to level ``level``."""
    n_old = values.shape[0] - 1
    out = np.empty(2 * n_old + 1)
    sd = math.sqrt(horizon / n_old) / 2.0
    c1 = (rng.TAG_PATH << 16) | level
    for i in range(n_old):
        left = values[i]
        right = values[i + 1]
        z = rng.normal_pair(seed, i, c1, c2, c3)[0]
        out[2 * i] = left
        out[2 * i + 1] = 0.5 * (left + right) + sd * z
    out[2 * n_old] = values[n_old]
    return out


@nb.njit(cache=True)
def _levy_path(seed, c2, c3, horizon, level):
    v = np.empty(2)
    v[0] = 0.0
    v[1] = math.sqrt(horizon) * rng.normal_pair(seed, 0, rng.TAG_PATH << 16, c2, c3)[0]
    for lev in range(1, level + 1):
        v = _insert_midpoints(v, seed, c2, c3, horizon, lev)
    return v


def _stream_words(stream: int) -> tuple[int, int]:
    return stream & 0xFFFFFFFF, (stream >> 32) & 0xFFFFFFFF


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Sample of a standard Brownian motion at ``2**level + 1`` equispaced times.

    ``seed`` is ``None`` for deterministic (e.g. constant) paths.
    """

    level: int
    horizon: float
    values: np.ndarray
    seed: int | None
    stream: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] != 2**self.level + 1:
            raise DataError(f"path at level {self.level} needs {2**self.level + 1} values, got {v.shape}")
        if v[0] != 0.0:
            raise DataError("a Brownian path must start at 0")
        if not np.all(np.isfinite(v)):
            raise DataError("path values must be finite")
        v = v.copy() if v is self.values and v.flags.writeable else v
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return 2**self.level

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def identity(self) -> tuple:
        return (self.seed, self.stream, float(self.horizon))

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; off-grid times raise :class:`AlignmentError`."""
        x = t / self.dt
        k = int(round(x))
        if abs(x - k) > 1e-9 * max(1.0, abs(x)) or k < 0 or k > self.n_steps:
            raise AlignmentError(f"time {t!r} is not on the level-{self.level} grid of [0, {self.horizon}]")
        return k

    def at(self, t: float) -> float:
        return float(self.values[self.index_of(t)])

    def restrict(self, level: int) -> "BrownianPath":
        """The same path seen on the coarser level-``level`` grid."""
        if level > self.level or level < 0:
            raise ParameterError(f"cannot restrict a level-{self.level} path to level {level}")
        stride = 2 ** (self.level - level)
        return BrownianPath(level, self.horizon, self.values[::stride], self.seed, self.stream)

    def same_path(self, other: "BrownianPath") -> bool:
        if self.identity != other.identity:
            return False
        if self.seed is None:
            lo = min(self.level, other.level)
            return np.array_equal(self.restrict(lo).values, other.restrict(lo).values)
        return True

    @classmethod
    def constant(cls, horizon: float, level: int) -> "BrownianPath":
        """The path ``b = 0``; used for the static-boundary reductions."""
        return cls(level, float(horizon), np.zeros(2**level + 1), None, 0)

    # -- CSV -----------------------------------------------------------------
    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# seed={'' if self.seed is None else self.seed},stream={self.stream},"
                f"level={self.level},horizon={self.horizon!r}\n"
            )
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "BrownianPath":
        with open(path, newline="") as fh:
            header = fh.readline().strip()
            if not header.startswith("#"):
                raise DataError("missing path header row")
            meta = dict(kv.split("=", 1) for kv in header[1:].strip().split(","))
            rows = list(csv.reader(fh))
        if rows[0] != ["time", "value"]:
            raise DataError("expected columns time,value")
        t = np.array([float(r[0]) for r in rows[1:]])
        v = np.array([float(r[1]) for r in rows[1:]])
        p = cls(
            int(meta["level"]),
            float(meta["horizon"]),
            v,
            int(meta["seed"]) if meta["seed"] else None,
            int(meta["stream"]),
        )
        if not np.allclose(t, p.times, rtol=0, atol=1e-12 * p.horizon):
            raise DataError("time column does not match the dyadic grid")
        return p


def sample_path(seed: int, stream: int, horizon: float, level: int) -> BrownianPath:
    """Deterministic Brownian sample on ``[0, horizon]`` at ``2**level`` steps."""
    if level > MAX_LEVEL:
        raise ResourceError(f"level {level} exceeds the limit {MAX_LEVEL}")
    if level < 1:
        raise ParameterError("level must be >= 1")
    if not horizon > 0:
        raise ParameterError("horizon must be > 0")
    c2, c3 = _stream_words(stream)
    v = _levy_path(np.uint64(seed), c2, c3, float(horizon), level)
    return BrownianPath(level, float(horizon), v, int(seed), int(stream))


def refine(path: BrownianPath) -> BrownianPath:
    """Insert Brownian-bridge midpoints; coarse nodes are kept exactly."""
    if path.level + 1 > MAX_LEVEL:
        raise ResourceError(f"level {path.level + 1} exceeds the limit {MAX_LEVEL}")
    if path.seed is None:
        return BrownianPath.constant(path.horizon, path.level + 1) if not np.any(path.values) else BrownianPath(
            path.level + 1, path.horizon, np.interp(
                np.linspace(0, path.horizon, 2 ** (path.level + 1) + 1), path.times, path.values
            ), None, path.stream)
    c2, c3 = _stream_words(path.stream)
    v = _insert_midpoints(np.asarray(path.values), np.uint64(path.seed), c2, c3, path.horizon, path.level + 1)
    return BrownianPath(path.level + 1, path.horizon, v, path.seed, path.stream)


def reversed_boundary(path: BrownianPath, t: float, s: float) -> float:
    """``b_{t-s}``, with ``b_r = b_0 = 0`` for ``r <= 0``."""
    if s < 0:
        raise ParameterError("s must be >= 0")
    ti = path.index_of(t)
    si = path.index_of(s) if s <= path.horizon else _offgrid_beyond(path, s)
    return float(path.values[ti - si]) if ti >= si else 0.0


def _offgrid_beyond(path: BrownianPath, s: float) -> int:
    k = s / path.dt
    if abs(k - round(k)) > 1e-9 * k:
        raise AlignmentError(f"time {s!r} is not on the path grid")
    return int(round(k))
