"""Direct simulation of the signal with the observation path frozen.

Each particle starts at ``x0 ~ pi0`` and moves as ``x0 + sigma1 w_t + sigma b_t``
on the grid of ``b``; it is removed the first time it leaves ``(0, 1)``.
Between grid times the path of ``x`` given both endpoints is a Brownian
bridge of variance rate ``a = sigma1^2 + sigma^2`` (the private ``w`` and the
unobserved part of ``b`` are both bridges), so a particle that stays inside
at both grid times is still removed with the bridge crossing probability,
taken as the product of the two one-wall factors.

Because ``w`` and ``x0`` are independent of ``b``, the unweighted average over
particles is the conditional expectation given the grid values of ``b``.

Two estimators of the survival curve are offered: the plain fraction of
particles still alive, and a guided resampled variant.  In the latter each
step is drawn conditioned to stay inside, the particle weight picks up the
probability of doing so, and the ensemble is resampled by weight.  The
survival probability is the product of the per-step mean weights.  The
ensemble never thins out, so survival probabilities far below ``1 / M``
(and below the smallest double in log form) are resolved.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numba as nb
import numpy as np

from . import rng
from .diagnostics import ExitCDF
from .errors import AlignmentError, ParameterError
from .model import InitialDensity, ModelParams, bump_density
from .paths import BrownianPath

_INIT, _STEP, _KILL, _RESAMPLE = range(4)
_TN_BASE = 16
_MAX_ATTEMPTS = 4096
_RSQRT2 = 1.0 / math.sqrt(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_FAR = 8.5
_FAR_BRIDGE = 20.0


@nb.njit(cache=True, inline="always")
def _bump(x, center, radius, norm):
    r = (x - center) / radius
    if r <= -1.0 or r >= 1.0:
        return 0.0
    return norm * math.exp(-1.0 / (1.0 - r * r))


@nb.njit(cache=True)
def _draw_start(seed, p, c3, center, radius, norm, peak):
    lo = center - radius
    c1 = (rng.TAG_PARTICLE << 16) | _INIT
    a = 0
    while True:
        u1, u2 = rng.uniform_pair(seed, a, c1, p, c3)
        x = lo + 2.0 * radius * u1
        if u2 * peak <= _bump(x, center, radius, norm):
            return x
        a += 1


@nb.njit(cache=True)
def _draw_starts(M, seed, c3, center, radius, norm, peak):
    x = np.empty(M)
    for p in range(M):
        x[p] = _draw_start(seed, p, c3, center, radius, norm, peak)
    return x


@nb.njit(cache=True, inline="always")
def _bridge_survival(x0, x1, v):
    return -math.expm1(-2.0 * x0 * x1 / v) * -math.expm1(-2.0 * (1.0 - x0) * (1.0 - x1) / v)


@nb.njit(cache=True)
def _simulate(M, db, h, sigma1, sigma, a, seed, c3, center, radius, norm, peak):
    n = db.shape[0]
    x = np.empty(M)
    x0 = np.empty(M)
    exit_step = np.full(M, -1, dtype=np.int64)
    sd = sigma1 * math.sqrt(h)
    v = a * h
    c_step = (rng.TAG_PARTICLE << 16) | _STEP
    c_kill = (rng.TAG_PARTICLE << 16) | _KILL
    for p in range(M):
        xp = _draw_start(seed, p, c3, center, radius, norm, peak)
        x0[p] = xp
        z2 = (0.0, 0.0)
        u2 = (0.0, 0.0)
        for k in range(n):
            if k % 2 == 0:
                z2 = rng.normal_pair(seed, k // 2, c_step, p, c3)
                u2 = rng.uniform_pair(seed, k // 2, c_kill, p, c3)
            z = z2[k % 2]
            xn = xp + sd * z + sigma * db[k]
            if xn <= 0.0 or xn >= 1.0:
                exit_step[p] = k + 1
                xp = xn
                break
            q = _bridge_survival(xp, xn, v)
            xp = xn
            if q < 1.0 and u2[k % 2] > q:
                exit_step[p] = k + 1
                break
        x[p] = xp
    return x0, x, exit_step


@nb.njit(cache=True, inline="always")
def _log_upper_tail(z):
    """``log Phi(-z)``, asymptotic beyond the range of ``erfc``."""
    if z < 25.0:
        return math.log(0.5 * math.erfc(z * _RSQRT2))
    iz2 = 1.0 / (z * z)
    return -0.5 * z * z - math.log(z) - _HALF_LOG_2PI + math.log1p(-iz2 * (1.0 - 3.0 * iz2))


@nb.njit(cache=True)
def _log_phi_interval(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` without cancellation or underflow in either tail."""
    if lo >= 0.0:
        a = _log_upper_tail(lo)
        return a + math.log1p(-math.exp(_log_upper_tail(hi) - a))
    if hi <= 0.0:
        a = _log_upper_tail(-hi)
        return a + math.log1p(-math.exp(_log_upper_tail(-lo) - a))
    return math.log1p(-0.5 * math.erfc(-lo * _RSQRT2) - 0.5 * math.erfc(hi * _RSQRT2))


@nb.njit(cache=True)
def _upper_truncated(lo, hi, seed, c0, c2, c3):
    """Standard normal conditioned on ``(lo, hi)`` with ``lo >= 0``, by rejection."""
    for attempt in range(_MAX_ATTEMPTS):
        c1 = (rng.TAG_PARTICLE << 16) | (_TN_BASE + attempt)
        u1, u2 = rng.uniform_pair(seed, c0, c1, c2, c3)
        if hi - lo < 1.0:
            # uniform proposal; the density is largest at lo
            z = lo + (hi - lo) * u1
            if u2 <= math.exp(0.5 * (lo * lo - z * z)):
                return z
        elif lo < 0.5:
            z1, z2 = rng.normal_pair(seed, c0, c1, c2, c3)
            z = abs(z1)
            if lo < z < hi:
                return z
        else:
            # exponential proposal for the tail beyond lo
            al = 0.5 * (lo + math.sqrt(lo * lo + 4.0))
            z = lo - math.log(u1) / al
            if z < hi and u2 <= math.exp(-0.5 * (z - al) * (z - al)):
                return z
    return lo + min(hi - lo, 1.0 / max(lo, 1.0)) * 0.5


@nb.njit(cache=True)
def _truncated_normal(lo, hi, seed, c0, c2, c3):
    if lo >= 0.0:
        return _upper_truncated(lo, hi, seed, c0, c2, c3)
    if hi <= 0.0:
        return -_upper_truncated(-hi, -lo, seed, c0, c2, c3)
    for attempt in range(_MAX_ATTEMPTS):
        c1 = (rng.TAG_PARTICLE << 16) | (_TN_BASE + attempt)
        z1, z2 = rng.normal_pair(seed, c0, c1, c2, c3)
        if lo < z1 < hi:
            return z1
        if lo < z2 < hi:
            return z2
    return 0.0


@nb.njit(cache=True)
def _guided(x, db, h, sigma1, sigma, a, seed, c3):
    """Sequential importance sampling of the killed particle system.

    Each step moves a particle to a draw of the Gaussian step conditioned to
    land inside ``(0, 1)`` and multiplies its weight by the probability of
    landing inside times the bridge survival factor.  Weights are reset by
    systematic resampling after every step; the running product of mean
    weights estimates the survival probability without bias.
    """
    M = x.shape[0]
    n = db.shape[0]
    s = sigma1 * math.sqrt(h)
    v = a * h
    xn = np.empty(M)
    w = np.empty(M)
    log_surv = np.zeros(n + 1)
    ess = np.ones(n + 1)
    c_rs = (rng.TAG_PARTICLE << 16) | _RESAMPLE
    extinct = -1
    for k in range(n):
        lmax = -np.inf
        for p in range(M):
            m = x[p] + sigma * db[k]
            lo = -m / s
            hi = (1.0 - m) / s
            y = m + s * _truncated_normal(lo, hi, seed, k, p, c3)
            y = min(max(y, 0.0), 1.0)
            if lo < -_FAR and hi > _FAR and x[p] * y > _FAR_BRIDGE * v and (1.0 - x[p]) * (1.0 - y) > _FAR_BRIDGE * v:
                # both factors equal 1 to double precision
                lw = 0.0
            else:
                q = _bridge_survival(x[p], y, v)
                lw = _log_phi_interval(lo, hi) + math.log(q) if q > 0.0 else -np.inf
            xn[p] = y
            w[p] = lw
            if lw > lmax:
                lmax = lw
        if lmax == -np.inf:
            extinct = k + 1
            for r in range(k + 1, n + 1):
                log_surv[r] = -np.inf
                ess[r] = 0.0
            break
        # weights relative to the largest one
        tot = 0.0
        for p in range(M):
            w[p] = math.exp(w[p] - lmax)
            tot += w[p]
        wmax = 1.0
        log_surv[k + 1] = log_surv[k] + lmax + math.log(tot / M)
        tot2 = 0.0
        for p in range(M):
            tot2 += (w[p] / wmax) ** 2
        ess[k + 1] = (tot / wmax) ** 2 / (tot2 * M)
        # systematic resampling
        step = tot / M
        target = rng.uniform_pair(seed, k, c_rs, 0, c3)[0] * step
        cum = w[0]
        j = 0
        for p in range(M):
            while cum < target and j < M - 1:
                j += 1
                cum += w[j]
            x[p] = xn[j]
            target += step
    return x, log_surv, ess, extinct


def _grid_increments(b: BrownianPath, T: float, level: int | None) -> tuple[np.ndarray, int]:
    level = b.level if level is None else level
    if level > b.level:
        raise ParameterError(f"particle level {level} is finer than the path level {b.level}")
    coarse = b.restrict(level)
    k = coarse.index_of(T) if T <= b.horizon * (1 + 1e-12) else None
    if k is None:
        raise ParameterError("path horizon shorter than T")
    return np.diff(coarse.values[: k + 1]), level


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Particles after simulation up to ``time``.

    ``x`` holds current positions for live particles and the first position
    outside (or the position at removal) for the others; ``exit_step`` is the
    grid index of removal or -1.
    """

    params: ModelParams
    path_identity: tuple
    level: int
    dt: float
    time: float
    seed: int
    x0: np.ndarray
    x: np.ndarray
    exit_step: np.ndarray

    @property
    def M(self) -> int:
        return self.x.shape[0]

    @property
    def alive(self) -> np.ndarray:
        return self.exit_step < 0

    @property
    def exit_times(self) -> np.ndarray:
        """Exit times (``nan`` for survivors)."""
        return np.where(self.exit_step >= 0, self.exit_step * self.dt, np.nan)

    @property
    def survivors(self) -> np.ndarray:
        return self.x[self.alive]

    def relabel(self, perm: np.ndarray) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.params, self.path_identity, self.level, self.dt, self.time, self.seed,
            self.x0[perm], self.x[perm], self.exit_step[perm],
        )


def simulate_exit(
    M: int,
    b: BrownianPath,
    T: float,
    params: ModelParams,
    seed: int,
    pi0: InitialDensity | None = None,
    level: int | None = None,
) -> tuple[ExitCDF, ParticleEnsemble]:
    """Fraction of particles removed by each grid time, with binomial SEs."""
    if M < 100:
        raise ParameterError("use at least 100 particles")
    pi0 = pi0 or bump_density()
    db, level = _grid_increments(b, T, level)
    n = db.shape[0]
    h = T / n
    x0, x, exit_step = _simulate(
        int(M), db, h, params.sigma1, params.sigma, params.a, np.uint64(seed), 0,
        pi0.center, pi0.radius, pi0.normalization, pi0.peak,
    )
    counts = np.bincount(exit_step[exit_step >= 0], minlength=n + 1)
    A = np.cumsum(counts) / M
    se = np.sqrt(A * (1 - A) / M)
    times = np.arange(n + 1) * h
    ens = ParticleEnsemble(params, b.identity, level, h, T, int(seed), x0, x, exit_step)
    return ExitCDF(times, A, se), ens


@dataclass(frozen=True)
class ResampledSurvival:
    """Survival estimate from the guided, resampled ensemble.

    ``ess`` is the effective sample size fraction of the weights at each step.
    ``positions`` are the (equally weighted) particles after the last step.
    """

    times: np.ndarray
    log_survival: np.ndarray
    ess: np.ndarray
    extinct_step: int
    positions: np.ndarray

    @property
    def survival(self) -> np.ndarray:
        return np.exp(self.log_survival)

    @property
    def log10_survival(self) -> np.ndarray:
        return self.log_survival / math.log(10.0)


def guided_ensemble(x_init: np.ndarray, db: np.ndarray, h: float, params: ModelParams, seed: int, stream: int = 0) -> ResampledSurvival:
    """Run the guided killed system from explicit start positions along increments ``db``."""
    x = np.array(x_init, dtype=float)
    if x.ndim != 1 or x.size < 100:
        raise ParameterError("use at least 100 particles")
    if np.any(x <= 0) or np.any(x >= 1):
        raise ParameterError("start positions must lie in (0, 1)")
    db = np.ascontiguousarray(db, dtype=float)
    x, logs, ess, ext = _guided(x, db, float(h), params.sigma1, params.sigma, params.a, np.uint64(seed), int(stream))
    return ResampledSurvival(np.arange(db.shape[0] + 1) * h, logs, ess, int(ext), x)


def resampled_survival(
    M: int,
    b: BrownianPath,
    T: float,
    params: ModelParams,
    seed: int,
    pi0: InitialDensity | None = None,
    level: int | None = None,
) -> ResampledSurvival:
    """Guided resampled estimate of ``P(tau > t | b)`` on the grid of ``b``."""

    if M < 100:
        raise ParameterError("use at least 100 particles")
    pi0 = pi0 or bump_density()
    db, level = _grid_increments(b, T, level)
    n = db.shape[0]
    x0 = _draw_starts(int(M), np.uint64(seed), 1, pi0.center, pi0.radius, pi0.normalization, pi0.peak)
    return guided_ensemble(x0, db, T / n, params, seed, stream=1)


def _as_function(phi) -> Callable[[np.ndarray], np.ndarray]:
    if callable(phi):
        return phi
    vals = np.asarray(phi, dtype=float)
    n = vals.shape[0] - 1
    if vals.ndim != 1 or n < 1:
        raise ParameterError("grid function needs at least two values on [0, 1]")
    if not np.all(np.isfinite(vals)):
        raise ParameterError("phi must be finite")
    grid = np.linspace(0.0, 1.0, n + 1)
    return lambda x: np.interp(x, grid, vals)


def conditional_moment(ensemble: ParticleEnsemble, phi) -> tuple[float, float]:
    """Estimate of ``E[1{tau > t} phi(x_t) | b]`` and its standard error."""
    f = _as_function(phi)
    vals = np.zeros(ensemble.M)
    alive = ensemble.alive
    fx = np.asarray(f(ensemble.x[alive]), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise ParameterError("phi is not finite at some particle position")
    vals[alive] = fx
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(ensemble.M))


def positivity_of_survival(
    b: BrownianPath,
    T: float,
    params: ModelParams,
    M: int,
    seed: int,
    method: str = "direct",
    level: int | None = None,
) -> float:
    """Minimum over grid times of the estimated survival probability.

    ``method="direct"`` counts survivors; ``method="resampled"`` uses the
    guided resampled estimator.
    """
    if method == "direct":
        cdf, _ = simulate_exit(M, b, T, params, seed, level=level)
        return float(np.min(1.0 - cdf.values))
    if method == "resampled":
        return float(np.min(resampled_survival(M, b, T, params, seed, level=level).survival))
    raise ParameterError(f"unknown method {method!r}")


def histogram(ensemble: ParticleEnsemble, bins: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Survivor counts in ``bins`` equal bins of ``[0, 1]``; returns ``(edges, counts)``."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(ensemble.survivors, bins=edges)
    return edges, counts


def survivor_density_l1(ensemble: ParticleEnsemble, x: np.ndarray, density: np.ndarray, bins: int = 64) -> float:
    """L1 distance between the survivor histogram (as a sub-density) and grid values.

    The grid density is averaged over each bin with the trapezoidal rule; the
    grid must be dyadic with at least one cell per bin.
    """
    edges, counts = histogram(ensemble, bins)
    width = 1.0 / bins
    hist = counts / (ensemble.M * width)
    n = x.shape[0] - 1
    per = n // bins
    if per < 1 or per * bins != n:
        raise AlignmentError("density grid must refine the histogram bins")
    cells = 0.5 * (density[:-1] + density[1:])
    avg = cells.reshape(bins, per).mean(axis=1)
    return float(np.sum(np.abs(hist - avg)) * width)


def cdf_to_csv(cdf: ExitCDF, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "A", "se"])
        se = cdf.se if cdf.se is not None else np.zeros_like(cdf.values)
        for t, a, s in zip(cdf.times, cdf.values, se):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(s))])


def histogram_to_csv(ensemble: ParticleEnsemble, path: str | Path, bins: int = 64) -> None:
    edges, counts = histogram(ensemble, bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
