"""Monte Carlo for the heat equation in the moving domain ``D_s = (-sigma b_s, 1 - sigma b_s)``.

The solution is represented through time-reversed killed Brownian motion:

    u_t(z) = E[ pi0(z + sigma1 w_t) 1{ z + sigma1 w_s + sigma b_{t-s} in (0, 1) for s <= t } ],

with ``b_r = 0`` for ``r <= 0``.  The fixed-frame density is recovered as
``pi_t(x) = u_t(x - sigma b_t)``.

Writing ``Y_s = sigma1 w_s + sigma b_{t-s}``, survival from ``z`` is the event
``-min Y < z < 1 - max Y``.  One replica therefore serves every starting
point at once (common random numbers across ``z``): it only has to record
``min Y``, ``max Y`` and ``w_t``.  Between grid times ``Y`` is a Brownian
bridge of variance rate ``a`` (the private ``w`` and the unobserved part of
``b``), and its extremes are drawn exactly from the bridge law.  Only the
steps whose endpoints come within a few bridge widths of the running
extreme need an extreme drawn at all.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from . import rng
from .errors import AlignmentError, DomainError, ParameterError
from .model import InitialDensity, ModelParams, bump_density
from .paths import BrownianPath

SURVIVED = "survived"
_W_STEP, _U_MAX, _U_MIN, _U_KILL = range(4)
_LAZY_SDS = 6.0


def _reversed_boundary_values(b: BrownianPath, t: float, level: int, reverse: bool = True) -> np.ndarray:
    """``b_{t - s}`` (or ``b_s`` with ``reverse=False``) at ``s = 0, h, .., t`` on the level grid."""
    if level > b.level:
        raise ParameterError(f"level {level} is finer than the path level {b.level}")
    coarse = b.restrict(level)
    k = coarse.index_of(t)
    vals = coarse.values[: k + 1]
    return vals[::-1].copy() if reverse else vals.copy()


@nb.njit(cache=True)
def _extremes(seed, stream, M, B, h, sigma1, v, bridge):
    """Per replica: min and max of ``Y = sigma1 W + B`` (with bridge extremes if ``bridge``), and ``W_t``."""
    n = B.shape[0] - 1
    ymin = np.empty(M)
    ymax = np.empty(M)
    wt = np.empty(M)
    Y = np.empty(n + 1)
    sd = math.sqrt(h)
    vh = v * h
    reach = _LAZY_SDS * math.sqrt(vh)
    c_w = (rng.TAG_FRONTIER << 16) | _W_STEP
    c_max = (rng.TAG_FRONTIER << 16) | _U_MAX
    c_min = (rng.TAG_FRONTIER << 16) | _U_MIN
    s_lo = stream & 0xFFFFFFFF
    for r in range(M):
        w = 0.0
        Y[0] = B[0]
        z2 = (0.0, 0.0)
        for k in range(n):
            if k % 2 == 0:
                z2 = rng.normal_pair(seed, k // 2, c_w, r, s_lo)
            w += sd * z2[k % 2]
            Y[k + 1] = sigma1 * w + B[k + 1]
        wt[r] = w
        hi = Y[0]
        lo = Y[0]
        for k in range(1, n + 1):
            if Y[k] > hi:
                hi = Y[k]
            if Y[k] < lo:
                lo = Y[k]
        top = hi
        bot = lo
        for k in range(n if bridge else 0):
            A = Y[k]
            Bk = Y[k + 1]
            d2 = (Bk - A) * (Bk - A)
            if max(A, Bk) + reach > hi:
                u = rng.uniform_pair(seed, k, c_max, r, s_lo)[0]
                m = 0.5 * (A + Bk + math.sqrt(d2 - 2.0 * vh * math.log(u)))
                if m > top:
                    top = m
            if min(A, Bk) - reach < lo:
                u = rng.uniform_pair(seed, k, c_min, r, s_lo)[0]
                m = 0.5 * (A + Bk - math.sqrt(d2 - 2.0 * vh * math.log(u)))
                if m < bot:
                    bot = m
        ymin[r] = bot
        ymax[r] = top
    return ymin, ymax, wt


@dataclass(frozen=True, eq=False)
class FrontierProblem:
    """Moving-domain heat problem at a fixed target time ``t``."""

    params: ModelParams
    b: BrownianPath
    t: float
    pi0: InitialDensity | None = None
    level: int | None = None

    def __post_init__(self):
        lev = self.b.level if self.level is None else self.level
        if lev > self.b.level:
            raise ParameterError("frontier level finer than the path")
        object.__setattr__(self, "level", lev)
        self.b.restrict(lev).index_of(self.t)  # alignment check
        if self.pi0 is None:
            object.__setattr__(self, "pi0", bump_density())

    def domain(self, s: float) -> tuple[float, float]:
        """``D_s = (-sigma b_s, 1 - sigma b_s)``; width is identically 1."""
        bs = self.b.at(s) if s > 0 else 0.0
        return (-self.params.sigma * bs, 1.0 - self.params.sigma * bs)

    @property
    def h(self) -> float:
        return self.b.horizon / 2**self.level

    def boundary_values(self, reverse: bool = True) -> np.ndarray:
        return self.params.sigma * _reversed_boundary_values(self.b, self.t, self.level, reverse)


@dataclass(frozen=True)
class Replicas:
    """Sufficient statistics of ``M`` reversed paths: extremes of ``Y`` and ``w_t``."""

    ymin: np.ndarray
    ymax: np.ndarray
    wt: np.ndarray
    sigma1: float

    @property
    def M(self) -> int:
        return self.wt.shape[0]

    def samples(self, z: np.ndarray, pi0) -> np.ndarray:
        """Matrix ``(len(z), M)`` of per-replica contributions."""
        z = np.atleast_1d(np.asarray(z, float))[:, None]
        alive = (z > -self.ymin[None, :]) & (z < 1.0 - self.ymax[None, :])
        return np.where(alive, pi0(z + self.sigma1 * self.wt[None, :]), 0.0)


def replicas(
    problem: FrontierProblem, M: int, seed: int, reverse: bool = True, envelope: bool = False, bridge: bool = True
) -> Replicas:
    """Simulate ``M`` reversed paths for ``problem`` (deterministic in ``seed``).

    ``bridge=False`` drops the between-grid extremes (grid-only exit test);
    it exists to measure what the bridge correction buys.
    """
    p = problem.params
    if problem.t == 0:
        z = np.zeros(M)
        return Replicas(z, z, z, p.sigma1)
    B = problem.boundary_values(reverse)
    if envelope:
        # replace the moving walls by the fixed interval that contains all of them
        lo_wall = -B.max()
        hi_wall = 1.0 - B.min()
        ymin, ymax, wt = _extremes(np.uint64(seed), 0, int(M), np.zeros_like(B), problem.h, p.sigma1, p.sigma1**2, bridge)
        # survival iff lo_wall < z + sigma1 W < hi_wall; shift the extremes so
        # that the usual test z > -ymin, z < 1 - ymax expresses it
        return Replicas(ymin - lo_wall, ymax + (1.0 - hi_wall), wt, p.sigma1)
    ymin, ymax, wt = _extremes(np.uint64(seed), 0, int(M), B, problem.h, p.sigma1, p.a, bridge)
    return Replicas(ymin, ymax, wt, p.sigma1)


def u_estimate(
    t: float,
    x,
    b: BrownianPath,
    M: int,
    seed: int,
    params: ModelParams,
    pi0: InitialDensity | None = None,
    level: int | None = None,
    envelope: bool = False,
    reverse: bool = True,
    bridge: bool = True,
) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Mean and standard error of ``u_t(x)`` over ``M`` reversed paths.

    ``x`` is a point (or array of points) in the closed domain ``D_t``.  All
    points share the same replicas.
    """
    if M < 100:
        raise ParameterError("use at least 100 replicas")
    prob = FrontierProblem(params, b, t, pi0, level)
    xs = np.asarray(x, dtype=float)
    lo, hi = prob.domain(t)
    tol = 1e-12
    if np.any(xs < lo - tol) or np.any(xs > hi + tol):
        raise DomainError(f"x outside the closed domain D_t = [{lo}, {hi}]")
    if t == 0:
        val = np.asarray(prob.pi0(xs), dtype=float)
        return (float(val), 0.0) if xs.ndim == 0 else (val, np.zeros_like(val))
    rep = replicas(prob, M, seed, reverse=reverse, envelope=envelope, bridge=bridge)
    smp = rep.samples(np.atleast_1d(xs), prob.pi0)
    mean = smp.mean(axis=1)
    se = smp.std(axis=1, ddof=1) / math.sqrt(M)
    if xs.ndim == 0:
        return float(mean[0]), float(se[0])
    return mean.reshape(xs.shape), se.reshape(xs.shape)


@dataclass(frozen=True)
class BoundaryRatio:
    """``u_t(wall + offset) / offset`` per offset, with logs for values below double range."""

    offsets: np.ndarray
    ratio: np.ndarray
    se: np.ndarray
    log10_ratio: np.ndarray
    method: str
    M: int

    def rows(self):
        return zip(self.offsets, self.ratio, self.se, self.log10_ratio)


def _guided_u(x0: float, db_rev: np.ndarray, h: float, params: ModelParams, pi0, M: int, seed: int, batch: int) -> float:
    """``log u`` from the reversed killed walk started at distance ``x0`` from the left wall."""
    from .particle_oracle import guided_ensemble

    res = guided_ensemble(np.full(M, x0), db_rev, h, params, seed, stream=(1 << 16) + batch)
    pay = np.mean(pi0(res.positions))
    if not pay > 0 or not np.isfinite(res.log_survival[-1]):
        return -np.inf
    return float(res.log_survival[-1] + math.log(pay))


def boundary_ratio(
    t: float,
    b: BrownianPath,
    offsets,
    M: int,
    seed: int,
    params: ModelParams,
    pi0: InitialDensity | None = None,
    level: int | None = None,
    method: str = "plain",
    batches: int = 4,
) -> BoundaryRatio:
    """``u_t(left wall + offset) / offset`` along decreasing offsets, common random numbers.

    ``method="plain"`` evaluates all offsets on one set of reversed paths.
    ``method="guided"`` runs, for every offset, the reversed walk from the
    offset with each step conditioned to stay inside and weighted by the
    probability of doing so (see :func:`condexit.particle_oracle.guided_ensemble`).
    All offsets reuse the same counters, and the estimate is the mean over
    ``batches`` independent groups of ``M / batches`` walks, whose spread
    gives the standard error.  The guided estimate stays positive where
    ``u`` is far below ``1 / M``.
    """
    off = np.asarray(offsets, dtype=float)
    if off.ndim != 1 or off.size < 1 or np.any(np.diff(off) >= 0):
        raise ParameterError("offsets must be strictly decreasing")
    if np.any(off <= 0) or np.any(off > 0.25):
        raise ParameterError("offsets must lie in (0, 0.25]")
    prob = FrontierProblem(params, b, t, pi0, level)
    if method == "plain":
        left = prob.domain(t)[0]
        mean, se = u_estimate(t, left + off, b, M, seed, params, prob.pi0, prob.level)
        with np.errstate(divide="ignore"):
            logs = np.log10(mean / off)
        return BoundaryRatio(off, mean / off, se / off, logs, method, int(M))
    if method != "guided":
        raise ParameterError(f"unknown method {method!r}")
    if batches < 2 or M // batches < 100:
        raise ParameterError("guided estimate needs at least two batches of 100 walks")
    B = _reversed_boundary_values(b, t, prob.level)
    db_rev = np.diff(B)
    m = M // batches
    logs = np.empty((off.size, batches))
    for i, o in enumerate(off):
        for j in range(batches):
            logs[i, j] = _guided_u(o, db_rev, prob.h, params, prob.pi0, m, seed, j)
    top = np.max(logs, axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    scaled = np.exp(logs - top)
    mean_s = scaled.mean(axis=1)
    se_s = scaled.std(axis=1, ddof=1) / math.sqrt(batches)
    with np.errstate(divide="ignore"):
        log10_u = (np.log(mean_s) + top[:, 0]) / math.log(10.0)
    log10_r = log10_u - np.log10(off)
    ratio = 10.0**log10_r
    se = se_s * np.exp(top[:, 0]) / off
    return BoundaryRatio(off, ratio, se, log10_r, method, int(m * batches))


def exit_time_reversed(
    x: float,
    w_path: BrownianPath,
    b: BrownianPath,
    t: float,
    params: ModelParams,
    seed: int = 0,
    replica: int = 0,
):
    """First grid time at which ``x + sigma1 w_s`` leaves ``D_{t-s}``, or :data:`SURVIVED`.

    Reference loop over the grid of ``w_path``.  Between grid times the
    crossing probability of the bridge (variance rate ``a``) is applied
    against the nearer wall, ``exp(-2 d1 d2 / (a ds))``.
    """
    if w_path.horizon < t * (1 - 1e-12):
        raise ParameterError("w path shorter than t")
    level = w_path.level if w_path.horizon == b.horizon else None
    if level is None or level > b.level:
        raise AlignmentError("w path and b must share horizon and the w grid must be a b grid")
    kt = w_path.index_of(t)
    B = params.sigma * _reversed_boundary_values(b, t, level)
    h = w_path.dt
    v = params.a * h
    c1 = rng.counter_word(rng.TAG_FRONTIER, _U_KILL)

    def dist(k):
        pos = x + params.sigma1 * w_path.values[k] + B[k]
        return pos, 1.0 - pos

    d_lo, d_hi = dist(0)
    if d_lo <= 0 or d_hi <= 0:
        return 0.0
    for k in range(kt):
        e_lo, e_hi = dist(k + 1)
        if e_lo <= 0 or e_hi <= 0:
            return (k + 1) * h
        near = min(d_lo * e_lo, d_hi * e_hi)
        p_cross = math.exp(-2.0 * near / v)
        u = rng.uniform_pair(np.uint64(seed), k, c1, replica, 0)[0]
        if u <= p_cross:
            return (k + 1) * h
        d_lo, d_hi = e_lo, e_hi
    return SURVIVED


def results_to_csv(rows, path: str | Path, header=("t", "x", "mean", "se", "M", "seed")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
