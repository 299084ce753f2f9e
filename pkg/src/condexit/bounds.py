"""Constants of the exponent bound for the boundary behaviour of the density.

The chain is

* ``p(c) = P(range of w on [0, 1] >= c (sqrt 2 - 1) / 2)`` by simulation,
* ``r = alpha (1 - p) / (p (1 - alpha))`` and ``beta = 2 ((r - 1) p + 1) / r**alpha``,
* ``alpha_hat(c) = inf{alpha in (0, 1) : beta(alpha, c) < 1}``, an upper bound for
  the exponent ``alpha(c)`` of the range process,
* ``gamma(c, d, delta) = P(tau_{d,d} ^ delta/2 < tau_{d,-c})`` for ``w`` started at ``d / sqrt 2``,
* ``nu0 = (1 - alpha_hat(c eps)) log2 gamma(c, d, 1)**-2``,

plus the explicit exponent ``(1 + mu) (2 pi eps^2)^{-1/2} exp(-1 / (2 eps^2))``
and a statistical check of the frequency of the events
``{B_t >= sqrt t}`` along geometric times.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np
from scipy.special import ndtr

from . import rng
from .errors import DegenerateParameterError, DivergentBoundError, DomainError, ParameterError
from .paths import _levy_path

RANGE_FACTOR = (math.sqrt(2.0) - 1.0) / 2.0
BETA_TOL = 1e-12
ALPHA_TOL = 1e-10
_ALPHA_GRID = 4096


# -- range probability -----------------------------------------------------------------


@nb.njit(cache=True)
def _ranges(seed, M, level):
    out = np.empty(M)
    c3 = rng.TAG_RANGE << 20
    for r in range(M):
        v = _levy_path(seed, r, c3, 1.0, level)
        out[r] = v.max() - v.min()
    return out


def brownian_ranges(M: int, seed: int, level: int = 12) -> np.ndarray:
    """Grid ranges of ``M`` Brownian paths on ``[0, 1]``.

    Paths are built by midpoint refinement, so replica ``r`` at a finer level
    is a refinement of replica ``r`` at a coarser one and its grid range can
    only grow.
    """
    if level < 1 or level > 20:
        raise ParameterError("range level must lie in 1..20")
    return _ranges(np.uint64(seed), int(M), int(level))


def range_prob(c: float, M: int, seed: int, level: int = 12, ranges: np.ndarray | None = None) -> tuple[float, float]:
    """Estimate of ``p(c)`` and its standard error.

    The grid range understates the true range, so the estimate is biased
    low by ``O(2**(-level/2))`` in the threshold.  ``ranges`` may carry a
    precomputed sample from :func:`brownian_ranges` to evaluate many ``c``
    on common paths.
    """
    if c < 0:
        raise ParameterError("c must be nonnegative")
    if c == 0:
        return 1.0, 0.0
    if ranges is None:
        if M < 1000:
            raise ParameterError("use at least 1000 replicas")
        ranges = brownian_ranges(M, seed, level)
    hit = ranges >= c * RANGE_FACTOR
    p = float(hit.mean())
    return p, float(math.sqrt(p * (1 - p) / hit.size))


def range_tail_series(x: float, terms: int = 400) -> float:
    """``P(range of w on [0, 1] >= x)`` from the series for the range density.

    The density is ``8 sum_k (-1)^(k-1) k^2 phi(k r)``; integrating each term
    over ``[x, inf)`` gives ``8 sum_k (-1)^(k-1) k Phi(-k x)``, absolutely
    convergent for ``x > 0``.  At least ``40 / x`` terms are summed so that
    the truncated tail is negligible for small ``x``.
    """
    if x <= 0:
        return 1.0
    k = np.arange(1, max(terms, int(math.ceil(40.0 / x))) + 1)
    sign = np.where(k % 2 == 1, 1.0, -1.0)
    return float(min(1.0, 8.0 * np.sum(sign * k * ndtr(-k * x))))


# -- beta and alpha_hat -------------------------------------------------------------------


def beta_of(alpha: float, c: float, p: float) -> tuple[float, float]:
    """``(r, beta)`` with both closed forms of ``beta`` evaluated and compared.

    ``c`` enters only through ``p = p(c)``; it is kept in the signature so
    call sites read like the definition.
    """
    if p <= 0.0 or p >= 1.0:
        raise DegenerateParameterError(f"p = {p} makes r undefined")
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    r = alpha * (1.0 - p) / (p * (1.0 - alpha))
    b1 = 2.0 * ((r - 1.0) * p + 1.0) / r**alpha
    b2 = 2.0 * (1.0 - p) / (1.0 - alpha) * r ** (-alpha)
    if abs(b1 - b2) > BETA_TOL * max(1.0, abs(b2)):
        raise ArithmeticError(f"beta formulas disagree: {b1!r} vs {b2!r}")
    return r, b2


def _beta(alpha, p):
    r = alpha * (1.0 - p) / (p * (1.0 - alpha))
    return 2.0 * (1.0 - p) / (1.0 - alpha) * r ** (-alpha)


def alpha_hat(c: float, p: float) -> float | None:
    """``inf{alpha in (0, 1) : beta(alpha, c) < 1}``, or ``None`` if no such value in ``(0, 1)``.

    ``beta -> 2 (1 - p)`` as ``alpha -> 0``, so for ``p > 1/2`` the set starts
    at 0 and its infimum is not in ``(0, 1)``; this is reported as absent.
    Otherwise the first grid point with ``beta < 1`` is refined by bisection.
    """
    if not 0.0 < p < 1.0:
        raise DegenerateParameterError(f"p = {p} must lie in (0, 1)")
    grid = (np.arange(1, _ALPHA_GRID) / _ALPHA_GRID).astype(float)
    below = _beta(grid, p) < 1.0
    if not below.any():
        return None
    j = int(np.argmax(below))
    if j == 0:
        lo_b = _beta(1e-300, p)
        if lo_b < 1.0:
            return None
        lo = 0.0
    else:
        lo = grid[j - 1]
    hi = grid[j]
    while hi - lo > ALPHA_TOL:
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if _beta(mid, p) < 1.0:
            hi = mid
        else:
            lo = mid
    if hi <= 0.0 or hi >= 1.0:
        return None
    return float(hi)


# -- gamma -------------------------------------------------------------------------------------


@nb.njit(cache=True)
def _gamma_paths(seed, M, y0, up, down, T, n):
    """1 where the walk from ``y0`` hits ``up`` first or avoids ``down`` up to ``T``."""
    h = T / n
    sd = math.sqrt(h)
    c_step = (rng.TAG_GAMMA << 16) | 0
    c_cross = (rng.TAG_GAMMA << 16) | 1
    out = np.empty(M, dtype=np.int8)
    for r in range(M):
        y = y0
        res = 1
        for k in range(n):
            z = rng.normal_pair(seed, k, c_step, r, 0)[0]
            yn = y + sd * z
            if yn >= up:
                res = 1
                break
            if yn <= down:
                res = 0
                break
            u1, u2 = rng.uniform_pair(seed, k, c_cross, r, 0)
            p_up = math.exp(-2.0 * (up - y) * (up - yn) / h)
            p_dn = math.exp(-2.0 * (y - down) * (yn - down) / h)
            hit_up = u1 < p_up
            hit_dn = u2 < p_dn
            if hit_up and hit_dn:
                # both walls crossed inside one step: the nearer crossing wins
                res = 1 if (up - max(y, yn)) < (min(y, yn) - down) else 0
                break
            if hit_up:
                res = 1
                break
            if hit_dn:
                res = 0
                break
            y = yn
        out[r] = res
    return out


def gamma_prob(c: float, d: float, delta: float, M: int, seed: int, level: int = 12) -> tuple[float, float]:
    """Estimate of ``gamma(c, d, delta)`` and its standard error.

    Start ``d / sqrt 2``, absorbing levels ``d`` and ``-c``, time cap
    ``delta / 2``; crossings between grid times are drawn from the bridge
    law at each level.
    """
    if c <= 0 or d <= 0 or delta <= 0:
        raise ParameterError("c, d, delta must be positive")
    if M < 100:
        raise ParameterError("use at least 100 replicas")
    ev = _gamma_paths(np.uint64(seed), int(M), d / math.sqrt(2.0), float(d), -float(c), 0.5 * delta, 2**level)
    g = float(ev.mean())
    return g, float(math.sqrt(g * (1 - g) / M))


def gamblers_ruin(c: float, d: float) -> float:
    """``P(hit d before -c)`` from ``d / sqrt 2``, a lower bound for ``gamma``."""
    return (c + d / math.sqrt(2.0)) / (c + d)


# -- exponents -------------------------------------------------------------------------------------


def nu0(eps: float, c: float, d: float, p: float | None = None, alpha: float | None = None, gamma: float | None = None) -> float | None:
    """``(1 - alpha_hat(c eps)) log2 gamma**-2``; ``None`` when ``alpha_hat`` is absent.

    Either pass ``alpha`` (``alpha_hat`` at ``c eps``) directly or ``p`` (the
    range probability at ``c eps``) to compute it.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    if gamma is None:
        raise ParameterError("gamma must be supplied")
    if gamma <= 0:
        raise DivergentBoundError("gamma = 0 makes the exponent infinite")
    if gamma > 1:
        raise ParameterError("gamma is a probability")
    if alpha is None:
        if p is None:
            raise ParameterError("supply p or alpha")
        alpha = alpha_hat(c * eps, p)
    if alpha is None:
        return None
    return (1.0 - alpha) * (-2.0 * math.log2(gamma))


def nu_remark(mu: float, eps: float) -> float:
    """``(1 + mu) (2 pi eps^2)^{-1/2} exp(-1 / (2 eps^2))``."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    if mu < 0:
        raise ParameterError("mu must be nonnegative")
    return (1.0 + mu) / math.sqrt(2.0 * math.pi * eps * eps) * math.exp(-1.0 / (2.0 * eps * eps))


# -- geometric-time check --------------------------------------------------------------------------


@dataclass
class Lemma31Report:
    """Summary of the geometric-time simulation.

    ``frequency[m]`` is the fraction of seeds with ``B_{gamma^m} >= gamma^{m/2}``;
    ``within_bound`` the fraction of seeds with ``m_k <= beta_factor k`` at
    ``k = K // 2`` (the chain is extended to ``m = beta_factor k`` for this
    count only); ``ergodic_median`` the median over seeds of the number of
    hits among ``m = 1..K`` divided by ``K``.
    """

    gamma_ratio: float
    beta_factor: float
    K: int
    seeds: int
    alpha: float
    frequency: np.ndarray
    frequency_se: np.ndarray
    within_bound: float
    ergodic_median: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frequency"] = [float(v) for v in self.frequency]
        d["frequency_se"] = [float(v) for v in self.frequency_se]
        return d


def lemma31_check(gamma_ratio: float, beta_factor: float, K: int, seeds: int, seed: int = 0) -> Lemma31Report:
    """Simulate ``B`` exactly at times ``gamma**m``, ``m = 0..K``, for many seeds.

    The scaled values ``Z_m = B_{gamma^m} / gamma^{m/2}`` form a stationary
    Gaussian AR(1) chain, ``Z_{m+1} = sqrt(gamma) Z_m + sqrt(1 - gamma) xi``,
    which gives exact joint samples.
    """
    alpha = float(ndtr(-1.0))
    if not 0 < gamma_ratio < 1:
        raise ParameterError("gamma_ratio must lie in (0, 1)")
    if beta_factor * alpha <= 1.0:
        raise ParameterError(f"beta_factor * alpha = {beta_factor * alpha:.4f} must exceed 1")
    if K < 20:
        raise ParameterError("K must be at least 20")
    if seeds < 2:
        raise ParameterError("need at least two seeds")
    k = K // 2
    # deciding m_k <= beta k only needs the chain up to m = beta k
    n_m = max(K, int(math.floor(beta_factor * k)))
    Z = np.empty((seeds, n_m + 1))
    g = math.sqrt(gamma_ratio)
    g1 = math.sqrt(1 - gamma_ratio)
    for r in range(seeds):
        xi = rng.normals(seed, rng.TAG_LEMMA, r, n_m + 1)
        Z[r, 0] = xi[0]
        for m in range(n_m):
            Z[r, m + 1] = g * Z[r, m] + g1 * xi[m + 1]
    hits = Z >= 1.0
    freq = hits[:, : K + 1].mean(axis=0)
    se = np.sqrt(freq * (1 - freq) / seeds)
    ok = 0
    for r in range(seeds):
        idx = np.flatnonzero(hits[r, 1:]) + 1
        if idx.size >= k and idx[k - 1] <= beta_factor * k:
            ok += 1
    ergodic = hits[:, 1 : K + 1].sum(axis=1) / K
    return Lemma31Report(
        float(gamma_ratio), float(beta_factor), int(K), int(seeds), alpha, freq, se,
        ok / seeds, float(np.median(ergodic)),
    )


# -- pipeline ---------------------------------------------------------------------------------------


@dataclass
class BoundConstants:
    """All constants of the bound for one parameter set, with standard errors."""

    c: float
    d: float
    delta: float
    eps: float
    mu: float
    p: float
    p_se: float
    alpha: float | None
    r: float | None
    beta: float | None
    alpha_hat: float | None
    gamma: float
    gamma_se: float
    nu0: float | None
    nu0_se: float | None
    nu_remark: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.gamma <= 1.0):
            raise ParameterError("p and gamma must be probabilities")
        if (self.nu0 is not None) != (self.alpha_hat is not None):
            raise ParameterError("nu0 must be present exactly when alpha_hat is")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def pipeline(
    eps: float,
    c: float = 40.0,
    d: float = 1.0,
    delta: float = 1.0,
    mu: float = 0.0,
    alpha: float = 0.3,
    M_range: int = 20000,
    M_gamma: int = 20000,
    seed: int = 0,
    level: int = 12,
) -> BoundConstants:
    """Compose range probability, ``alpha_hat``, ``gamma`` and both exponents.

    ``p`` and ``alpha_hat`` are evaluated at ``c eps`` (the argument used by
    ``nu0``); ``beta`` is reported at the given ``alpha``.  The error of
    ``nu0`` is propagated linearly from the errors of ``p`` and ``gamma``.
    """
    ranges = brownian_ranges(M_range, seed, level)
    ce = c * eps
    p, p_se = range_prob(ce, M_range, seed, level, ranges=ranges)
    if 0.0 < p < 1.0:
        r, beta = beta_of(alpha, ce, p)
        ah = alpha_hat(ce, p)
    else:
        r = beta = ah = None
    g, g_se = gamma_prob(c, d, delta, M_gamma, seed + 1, level)
    if g <= 0:
        raise DivergentBoundError("gamma estimate is 0")
    n0 = nu0(eps, c, d, alpha=ah, gamma=g) if ah is not None else None
    n0_se = None
    if n0 is not None:
        dn_dg = (1.0 - ah) * 2.0 / (g * math.log(2.0))
        dp = max(p_se, 1e-6)
        a_up = alpha_hat(ce, min(p + dp, 1 - 1e-12))
        da_dp = 0.0 if a_up is None else (a_up - ah) / dp
        dn_da = 2.0 * math.log2(g)
        n0_se = math.sqrt((dn_dg * g_se) ** 2 + (dn_da * da_dp * p_se) ** 2)
    return BoundConstants(
        c=c, d=d, delta=delta, eps=eps, mu=mu, p=p, p_se=p_se, alpha=alpha, r=r, beta=beta,
        alpha_hat=ah, gamma=g, gamma_se=g_se, nu0=n0, nu0_se=n0_se, nu_remark=nu_remark(mu, eps),
        provenance={"seed": seed, "range_seed": seed, "gamma_seed": seed + 1, "M_range": M_range, "M_gamma": M_gamma, "level": level},
    )
