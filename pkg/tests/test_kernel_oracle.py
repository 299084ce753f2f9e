from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from condexit.errors import DomainError, ParameterError
from condexit.kernel_oracle import (
    KernelProblem,
    halfline_mass,
    halfline_solution,
    interval_derivative,
    interval_mass,
    interval_solution,
    mass_flux,
    series_terms,
)
from condexit.model import bump_density

PI0 = bump_density(0.5, 0.25)


def bump_problem(a=1.0, t0=0.0):
    return KernelProblem.from_density(PI0, a, t0)


def test_halfline_vanishes_at_the_wall():
    prob = bump_problem()
    for t in (1e-3, 0.1, 2.0):
        assert halfline_solution(prob, t, 0.0) == 0.0


def test_halfline_recovers_data_as_time_shrinks():
    prob = bump_problem()
    errs = [abs(halfline_solution(prob, t, 0.5) - PI0(0.5)) for t in (1e-3, 1e-4, 1e-5)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_halfline_mass_decreases():
    prob = bump_problem()
    m1, m2 = halfline_mass(prob, 0.1), halfline_mass(prob, 0.2)
    assert m2 < m1 < 1.0
    x = np.linspace(0, 8, 16001)
    direct = integrate.simpson(halfline_solution(prob, 0.1, x), x=x)
    assert direct == pytest.approx(m1, abs=1e-8)


def test_halfline_requires_positive_elapsed_time():
    prob = bump_problem(t0=0.2)
    with pytest.raises(DomainError):
        halfline_solution(prob, 0.2, 0.3)
    with pytest.raises(DomainError):
        mass_flux(prob, 0.1)


def test_sine_mode_decay():
    for a in (0.5, 1.01):
        prob = KernelProblem.sine_mode(a)
        x = np.linspace(0, 1, 257)
        for t in (0.01, 0.1, 0.5):
            sup = np.max(np.abs(interval_solution(prob, t, x)))
            assert sup == pytest.approx(math.exp(-a * math.pi**2 * t / 2), abs=1e-10)


def test_interval_solution_is_zero_at_walls():
    prob = bump_problem()
    assert interval_solution(prob, 0.05, 0.0) == 0.0
    assert interval_solution(prob, 0.05, 1.0) == 0.0


def test_interval_at_start_time_returns_the_data():
    prob = bump_problem()
    x = np.linspace(0, 1, 33)
    np.testing.assert_array_equal(interval_solution(prob, 0.0, x), PI0(x))


def test_interval_and_halfline_agree_near_the_left_wall():
    prob = bump_problem()
    x = np.linspace(0, 0.2, 41)
    for tau in (0.002, 0.01):
        np.testing.assert_allclose(interval_solution(prob, tau, x), halfline_solution(prob, tau, x), atol=1e-6)


def test_truncation_bound_is_certified():
    prob = bump_problem()
    val, bound = interval_solution(prob, 0.01, np.linspace(0, 1, 65), with_bound=True)
    assert bound < 1e-10
    ref = interval_solution(prob, 0.01, np.linspace(0, 1, 65), K=series_terms(prob, 0.01).K + 200)
    assert np.max(np.abs(val - ref)) <= bound + 1e-13
    with pytest.raises(ParameterError):
        interval_solution(prob, 0.01, 0.5, K=0)


def test_mass_flux_of_zero_data():
    prob = KernelProblem(1.0, lambda x: np.zeros_like(np.asarray(x, dtype=float)), 0.0, (0.0, 1.0))
    assert mass_flux(prob, 0.1) == 0.0


def test_mass_flux_is_the_outflow_rate():
    prob = bump_problem()
    t, h = 0.1, 1e-4
    dm = (halfline_mass(prob, t + h) - halfline_mass(prob, t - h)) / (2 * h)
    assert mass_flux(prob, t) == pytest.approx(-dm, abs=1e-6)


def test_mass_flux_matches_y_integral_form():
    # (2 pi a tau^3)^(-1/2) int y f(y) exp(-y^2/(2 a tau)) dy, by adaptive quadrature
    a, tau = 1.3, 0.07
    prob = bump_problem(a)
    val, _ = integrate.quad(lambda y: y * PI0(y) * math.exp(-y * y / (2 * a * tau)), 0.25, 0.75,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    assert mass_flux(prob, tau) == pytest.approx(val / math.sqrt(2 * math.pi * a * tau**3), abs=1e-8)


def test_interval_derivative_matches_finite_difference():
    prob = bump_problem()
    h = 1e-5
    fd = (interval_solution(prob, 0.1, h) - interval_solution(prob, 0.1, 0.0)) / h
    assert interval_derivative(prob, 0.1) == pytest.approx(fd, rel=1e-4)


def test_interval_mass_matches_quadrature():
    prob = bump_problem()
    x = np.linspace(0, 1, 4097)
    assert interval_mass(prob, 0.1) == pytest.approx(integrate.simpson(interval_solution(prob, 0.1, x), x=x), abs=1e-10)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 0.5))
def test_linearity(alpha, beta, t):
    f = lambda x: PI0(x)
    g = lambda x: np.sin(np.pi * np.asarray(x)) * np.asarray(x)
    pf, pg = KernelProblem(1.0, f, sup_data=PI0.peak), KernelProblem(1.0, g, sup_data=1.0)
    pc = KernelProblem(1.0, lambda x: alpha * f(x) + beta * g(x), sup_data=abs(alpha) * PI0.peak + abs(beta))
    x = np.linspace(0, 1, 17)
    for fn in (halfline_solution, interval_solution):
        lhs = fn(pc, t, x)
        rhs = alpha * fn(pf, t, x) + beta * fn(pg, t, x)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(alpha) + abs(beta)) * 10)


@given(st.floats(1e-3, 1.0))
def test_maximum_principle_and_comparison(t):
    prob = bump_problem()
    x = np.linspace(0, 1, 129)
    u = interval_solution(prob, t, x)
    v = halfline_solution(prob, t, x)
    assert np.all(u >= -1e-10) and np.all(u <= PI0.peak + 1e-10)
    assert np.all(u <= v + 1e-8)


def test_grid_data_problem():
    x = np.linspace(0, 1, 2**6 + 1)
    prob = KernelProblem.from_grid(np.sin(np.pi * x), 1.0)
    # piecewise-linear sine: first coefficient close to 1
    assert series_terms(prob, 0.1).coeffs[0] == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ParameterError):
        KernelProblem.from_grid(np.ones(6), 1.0)
