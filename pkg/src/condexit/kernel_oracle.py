"""Exact solutions of the fixed-boundary heat equation ``d_t eta = (a/2) eta''``.

Two closed forms serve as ground truth:

* the half line ``(0, inf)`` with an absorbing wall at 0, by the method of
  images (a Gaussian minus its reflection), integrated against the data with
  composite Gauss-Legendre quadrature;
* the unit interval with absorbing walls at 0 and 1, by the sine eigen-series
  with a certified truncation rule.

Both accept initial data as a callable on ``[0, 1]`` (typically the bump
density) or as nodal values on a dyadic grid (piecewise-linear data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import special

from .errors import DomainError, ParameterError, ResourceError

GL_NODES = 64
SERIES_TOL = 1e-10
SERIES_FLOOR = 16
SERIES_CAP = 1 << 16

_gl_x, _gl_w = np.polynomial.legendre.leggauss(GL_NODES)


@dataclass(frozen=True, eq=False)
class KernelProblem:
    """Heat problem data: diffusion ``a_eff``, initial data, start time ``t0``.

    ``support`` is the closed interval outside which the data vanish; the
    quadrature panels are dyadic subintervals of it.  ``sup_data`` bounds the
    magnitude of the data and feeds the series truncation bound.
    """

    a_eff: float
    data: Callable[[np.ndarray], np.ndarray]
    t0: float = 0.0
    support: tuple[float, float] = (0.0, 1.0)
    sup_data: float | None = None
    min_panels: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.a_eff) and self.a_eff > 0):
            raise ParameterError(f"a_eff must be finite and > 0, got {self.a_eff!r}")
        lo, hi = self.support
        if not (0.0 <= lo < hi <= 1.0):
            raise ParameterError(f"data support {self.support} must be a subinterval of [0, 1]")
        if self.sup_data is None:
            xs = np.linspace(lo, hi, 4097)
            vals = np.asarray(self.data(xs), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ParameterError("initial data must be finite")
            object.__setattr__(self, "sup_data", float(np.max(np.abs(vals))))

    @classmethod
    def from_density(cls, density, a_eff: float, t0: float = 0.0) -> "KernelProblem":
        """Problem with a bump :class:`~condexit.model.InitialDensity` as data."""
        return cls(a_eff, density, t0, density.support, float(density.peak))

    @classmethod
    def from_grid(cls, values, a_eff: float, t0: float = 0.0) -> "KernelProblem":
        """Problem with piecewise-linear data through nodal values on ``[0, 1]``."""
        v = np.asarray(values, dtype=float)
        n = v.shape[0] - 1
        if n < 1 or n & (n - 1):
            raise ParameterError("grid data needs 2**level + 1 values")
        if not np.all(np.isfinite(v)):
            raise ParameterError("initial data must be finite")
        xg = np.linspace(0.0, 1.0, n + 1)
        v = v.copy()
        return cls(a_eff, lambda x: np.interp(x, xg, v), t0, (0.0, 1.0), float(np.max(np.abs(v))), n)

    @classmethod
    def sine_mode(cls, a_eff: float, k: int = 1, t0: float = 0.0) -> "KernelProblem":
        return cls(a_eff, lambda x: np.sin(k * math.pi * np.asarray(x)), t0, (0.0, 1.0), 1.0, 4 * k)

    # -- quadrature ----------------------------------------------------------
    def nodes(self, panels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes, weights and data values on ``panels`` dyadic panels."""
        panels = max(panels, self.min_panels)
        panels = 1 << int(math.ceil(math.log2(panels)))
        lo, hi = self.support
        h = (hi - lo) / panels
        mids = lo + h * (np.arange(panels) + 0.5)
        y = (mids[:, None] + 0.5 * h * _gl_x[None, :]).ravel()
        w = np.tile(0.5 * h * _gl_w, panels)
        return y, w, np.asarray(self.data(y), dtype=float)

    def elapsed(self, t: float, strict: bool = True) -> float:
        tau = float(t) - self.t0
        if tau < 0 or (strict and tau == 0):
            raise DomainError(f"time {t!r} must be {'>' if strict else '>='} t0 = {self.t0!r}")
        return tau


def _panels_for_width(problem: KernelProblem, scale: float) -> int:
    lo, hi = problem.support
    return max(1, int(math.ceil((hi - lo) / max(scale, 1e-300))))


def _heat_panels(problem: KernelProblem, tau: float) -> int:
    # keep each panel within a few kernel widths so 64 nodes resolve the Gaussian
    return min(_panels_for_width(problem, 4.0 * math.sqrt(problem.a_eff * tau)), 1 << 14)


def halfline_solution(problem: KernelProblem, t: float, x):
    """Absorbed heat flow on ``(0, inf)`` evaluated at ``x >= 0``.

    Uses the image kernel ``g(x - y) - g(x + y)`` with ``g`` the Gaussian of
    variance ``a_eff (t - t0)``.
    """
    tau = problem.elapsed(t)
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0):
        raise DomainError("half-line solution needs x >= 0")
    v = problem.a_eff * tau
    y, w, f = problem.nodes(_heat_panels(problem, tau))
    xf = np.atleast_1d(xs).ravel()
    norm = 1.0 / math.sqrt(2.0 * math.pi * v)
    out = np.empty(xf.shape[0])
    for i, xi in enumerate(xf):
        k = np.exp(-((xi - y) ** 2) / (2 * v)) - np.exp(-((xi + y) ** 2) / (2 * v))
        out[i] = norm * np.dot(w, f * k)
    out = np.where(xf == 0.0, 0.0, out)
    return out.reshape(xs.shape) if xs.ndim else float(out[0])


def halfline_mass(problem: KernelProblem, t: float) -> float:
    """``int_0^inf`` of the half-line solution, ``int f(y) erf(y / sqrt(2 a tau)) dy``."""
    tau = problem.elapsed(t)
    y, w, f = problem.nodes(_heat_panels(problem, tau))
    return float(np.dot(w, f * special.erf(y / math.sqrt(2.0 * problem.a_eff * tau))))


def mass_flux(problem: KernelProblem, t: float) -> float:
    """Outflow rate through the wall, ``(a/2) D psi_t(0+)``.

    Differentiating the image kernel under the integral gives
    ``(2 pi a tau^3)^(-1/2) int y f(y) exp(-y^2 / (2 a tau)) dy``.  The value
    is the rate at which mass leaves, so ``d/dt halfline_mass = -mass_flux``.
    """
    tau = problem.elapsed(t)
    y, w, f = problem.nodes(_heat_panels(problem, tau))
    a = problem.a_eff
    return float(np.dot(w, y * f * np.exp(-(y * y) / (2 * a * tau)))) / math.sqrt(2 * math.pi * a * tau**3)


class SeriesTerms(NamedTuple):
    coeffs: np.ndarray  # c_k for k = 1..K
    decay: np.ndarray  # exp(-a k^2 pi^2 tau / 2)
    bound: float  # certified sup-norm bound on the dropped tail

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]


def _tail(a: float, tau: float, K: int) -> float:
    s, k = 0.0, K + 1
    while True:
        term = math.exp(-a * k * k * math.pi**2 * tau / 2)
        s += term
        if term < 1e-18 * max(s, 1e-300) or term == 0.0:
            return s
        k += 1


def truncation_order(problem: KernelProblem, t: float) -> int:
    """Smallest ``K >= 16`` whose tail bound ``2 sup|f| sum_{k>K} e^{...}`` is below 1e-10."""
    tau = problem.elapsed(t, strict=False)
    if tau == 0:
        raise DomainError("no series truncation at zero elapsed time")
    a = problem.a_eff
    scale = 2.0 * problem.sup_data
    if scale == 0:
        return SERIES_FLOOR
    guess = math.sqrt(max(2.0 * math.log(scale / SERIES_TOL), 0.0) / (a * math.pi**2 * tau))
    K = max(SERIES_FLOOR, int(guess))
    while scale * _tail(a, tau, K) >= SERIES_TOL:
        K += 1
    if K > SERIES_CAP:
        raise ResourceError(f"sine series needs {K} terms at elapsed time {tau!r}")
    return K


def series_terms(problem: KernelProblem, t: float, K: int | None = None) -> SeriesTerms:
    tau = problem.elapsed(t, strict=False)
    if K is None:
        K = truncation_order(problem, t)
    if K < 1:
        raise ParameterError(f"series truncation K must be >= 1, got {K}")
    # one panel per ~8 half-waves of sin(K pi y) keeps 64 nodes exact to rounding
    y, w, f = problem.nodes(max(_panels_for_width(problem, 8.0 / K), 2))
    k = np.arange(1, K + 1)
    coeffs = 2.0 * (np.sin(np.pi * np.outer(k, y)) @ (w * f))
    decay = np.exp(-problem.a_eff * (k * math.pi) ** 2 * tau / 2)
    bound = 2.0 * problem.sup_data * _tail(problem.a_eff, tau, K)
    return SeriesTerms(coeffs, decay, bound)


def interval_solution(problem: KernelProblem, t: float, x, K: int | None = None, with_bound: bool = False):
    """Absorbed heat flow on ``(0, 1)``: ``sum_k c_k sin(k pi x) exp(-a k^2 pi^2 tau / 2)``.

    At ``t == t0`` the data are returned directly.  With ``with_bound`` the
    sup-norm truncation bound is returned as a second value.
    """
    tau = problem.elapsed(t, strict=False)
    xs = np.asarray(x, dtype=float)
    if np.any((xs < 0) | (xs > 1)):
        raise DomainError("interval solution needs x in [0, 1]")
    if K is not None and K < 1:
        raise ParameterError(f"series truncation K must be >= 1, got {K}")
    if tau == 0:
        val = np.asarray(problem.data(xs), dtype=float)
        val = np.where((xs == 0) | (xs == 1), 0.0, val)
        bound = 0.0
    else:
        st = series_terms(problem, t, K)
        k = np.arange(1, st.K + 1)
        xf = np.atleast_1d(xs).ravel()
        val = np.sin(np.pi * np.outer(xf, k)) @ (st.coeffs * st.decay)
        val[(xf == 0) | (xf == 1)] = 0.0
        val = val.reshape(xs.shape)
        bound = st.bound
    val = float(val) if xs.ndim == 0 else val
    return (val, bound) if with_bound else val


def interval_derivative(problem: KernelProblem, t: float, x=0.0, K: int | None = None):
    """Spatial derivative of :func:`interval_solution` (default at the left wall)."""
    st = series_terms(problem, t, K)
    if problem.elapsed(t, strict=False) == 0:
        raise DomainError("derivative series needs t > t0")
    k = np.arange(1, st.K + 1)
    xs = np.asarray(x, dtype=float)
    val = np.cos(np.pi * np.outer(np.atleast_1d(xs).ravel(), k)) @ (k * math.pi * st.coeffs * st.decay)
    return float(val[0]) if xs.ndim == 0 else val.reshape(xs.shape)


def interval_mass(problem: KernelProblem, t: float, K: int | None = None) -> float:
    """``int_0^1`` of the interval solution, termwise."""
    if problem.elapsed(t, strict=False) == 0:
        y, w, f = problem.nodes(64)
        return float(np.dot(w, f))
    st = series_terms(problem, t, K)
    k = np.arange(1, st.K + 1)
    return float(np.sum(st.coeffs * st.decay * (1 - np.cos(k * math.pi)) / (k * math.pi)))
