from __future__ import annotations

import numpy as np
import pytest

from condexit.errors import AlignmentError, DomainError, ParameterError
from condexit.kernel_oracle import KernelProblem, interval_derivative, interval_solution
from condexit.mc_frontier import (
    SURVIVED,
    FrontierProblem,
    boundary_ratio,
    exit_time_reversed,
    replicas,
    results_to_csv,
    u_estimate,
)
from condexit.model import ModelParams, bump_density
from condexit.paths import BrownianPath, sample_path

PI0 = bump_density()


def test_domain_has_unit_width_and_follows_the_path():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 8)
    prob = FrontierProblem(p, b, 0.25)
    for s in b.times[::16]:
        lo, hi = prob.domain(s)
        assert hi - lo == pytest.approx(1.0, abs=1e-15)
        assert lo == -p.sigma * b.at(s)
    with pytest.raises(AlignmentError):
        FrontierProblem(p, b, 0.1)


def test_start_outside_exits_at_once():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 8)
    w = sample_path(4, 9, 0.25, 8)
    lo, hi = FrontierProblem(p, b, 0.25).domain(0.25)
    assert exit_time_reversed(lo - 0.01, w, b, 0.25, p) == 0.0
    assert exit_time_reversed(hi + 0.01, w, b, 0.25, p) == 0.0


def test_reference_loop_survival_matches_the_kernel():
    # b = 0 and sigma = 0: survival of x + sigma1 w in (0, 1) is the interval
    # solution with data 1
    p = ModelParams.decoupled(1.0)
    b = BrownianPath.constant(0.05, 6)
    n = 3000
    alive = sum(
        exit_time_reversed(0.3, sample_path(s, 1, 0.05, 6), b, 0.05, p, seed=s) == SURVIVED for s in range(n)
    )
    ones = KernelProblem(1.0, lambda x: np.ones_like(np.asarray(x, float)), sup_data=1.0)
    ref = interval_solution(ones, 0.05, 0.3)
    se = np.sqrt(ref * (1 - ref) / n)
    assert abs(alive / n - ref) <= 4 * se


def test_exit_time_reversed_checks_grids():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 8)
    with pytest.raises(ParameterError):
        exit_time_reversed(0.5, sample_path(4, 0, 0.1, 8), b, 0.25, p)
    with pytest.raises(AlignmentError):
        exit_time_reversed(0.5, sample_path(4, 0, 0.25, 10), b, 0.25, p)


def test_u_at_time_zero_is_the_initial_density():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 8)
    x = np.linspace(0, 1, 17)
    mean, se = u_estimate(0.0, x, b, 100, 1, p)
    np.testing.assert_array_equal(mean, PI0(x))
    assert np.all(se == 0)


def test_u_vanishes_on_the_boundary():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 10)
    lo, hi = FrontierProblem(p, b, 0.25).domain(0.25)
    mean, se = u_estimate(0.25, np.array([lo, hi]), b, 10_000, 2, p)
    assert np.all(np.abs(mean) <= 3 * se + 1e-300)


def test_u_rejects_points_outside_and_small_ensembles():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 10)
    lo, hi = FrontierProblem(p, b, 0.25).domain(0.25)
    with pytest.raises(DomainError):
        u_estimate(0.25, hi + 0.01, b, 1000, 2, p)
    with pytest.raises(ParameterError):
        u_estimate(0.25, 0.5 * (lo + hi), b, 99, 2, p)


def test_static_boundary_matches_the_kernel():
    p = ModelParams.decoupled(1.0)
    b = BrownianPath.constant(0.1, 12)
    mean, se = u_estimate(0.1, 0.5, b, 100_000, 5, p)
    ref = interval_solution(KernelProblem.from_density(PI0, p.sigma1**2), 0.1, 0.5)
    assert abs(mean - ref) <= max(3 * se, 1e-3)


def test_deterministic_in_seed():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 10)
    x = np.linspace(0.1, 0.3, 5) - p.sigma * b.at(0.25)
    a1 = u_estimate(0.25, x, b, 2000, 9, p)
    a2 = u_estimate(0.25, x, b, 2000, 9, p)
    np.testing.assert_array_equal(a1[0], a2[0])
    assert not np.array_equal(a1[0], u_estimate(0.25, x, b, 2000, 10, p)[0])


def test_envelope_never_decreases_u():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 10)
    x = np.linspace(0.05, 0.95, 19) - p.sigma * b.at(0.25)
    mov, se1 = u_estimate(0.25, x, b, 20_000, 4, p)
    env, se2 = u_estimate(0.25, x, b, 20_000, 4, p, envelope=True)
    assert np.all(env >= mov - 3 * np.hypot(se1, se2))


def test_envelope_of_a_static_boundary_is_the_boundary():
    p = ModelParams.decoupled(0.7)
    b = BrownianPath.constant(0.25, 8)
    x = np.linspace(0.05, 0.95, 7)
    np.testing.assert_array_equal(
        u_estimate(0.25, x, b, 2000, 4, p)[0], u_estimate(0.25, x, b, 2000, 4, p, envelope=True)[0]
    )


def test_time_reversal_is_invisible_for_a_constant_path():
    p = ModelParams.from_eps(0.5)
    b = BrownianPath.constant(0.25, 10)
    x = np.linspace(0.05, 0.95, 7)
    fwd = u_estimate(0.25, x, b, 2000, 4, p, reverse=False)
    rev = u_estimate(0.25, x, b, 2000, 4, p, reverse=True)
    np.testing.assert_array_equal(fwd[0], rev[0])


@pytest.mark.slow
def test_bridge_correction_reduces_refinement_change():
    # averaged over observation paths: the change of the exit probability
    # under one grid refinement, with and without the bridge correction
    p = ModelParams.from_eps(0.5)
    change = {True: [], False: []}
    for s in range(10):
        b = sample_path(s, 0, 0.25, 12)
        z = 0.5 - p.sigma * b.at(0.25)
        for bridge in (True, False):
            P = []
            for L in (8, 9):
                r = replicas(FrontierProblem(p, b, 0.25, level=L), 100_000, 3, bridge=bridge)
                P.append(1.0 - np.mean((z > -r.ymin) & (z < 1.0 - r.ymax)))
            change[bridge].append(abs(P[1] - P[0]))
    assert np.mean(change[True]) < np.mean(change[False])


def test_boundary_ratio_is_nonnegative_and_validates_offsets():
    p = ModelParams.from_eps(0.5)
    b = sample_path(3, 0, 0.25, 10)
    off = 2.0 ** -np.arange(2, 8)
    r = boundary_ratio(0.25, b, off, 20_000, 1, p)
    assert np.all(r.ratio >= -3 * r.se)
    assert len(list(r.rows())) == off.size
    with pytest.raises(ParameterError):
        boundary_ratio(0.25, b, off[::-1], 1000, 1, p)
    with pytest.raises(ParameterError):
        boundary_ratio(0.25, b, [0.5, 0.1], 1000, 1, p)
    with pytest.raises(ParameterError):
        boundary_ratio(0.25, b, [0.1, 0.1], 1000, 1, p)
    with pytest.raises(ParameterError):
        boundary_ratio(0.25, b, off, 1000, 1, p, method="nope")


def test_boundary_ratio_static_control_approaches_kernel_derivative():
    p = ModelParams.decoupled(1.0)
    b = BrownianPath.constant(0.1, 10)
    D = interval_derivative(KernelProblem.from_density(PI0, p.a), 0.1)
    r = boundary_ratio(0.1, b, 2.0 ** -np.arange(6, 8), 20_000, 1, p, method="guided")
    assert np.all(np.abs(r.ratio / D - 1) < 0.05)
    plain = boundary_ratio(0.1, b, 2.0 ** -np.arange(4, 8), 100_000, 1, p)
    assert np.all(np.abs(plain.ratio - D) <= 3 * plain.se + 0.03 * D)


def test_guided_and_plain_agree_where_both_work():
    p = ModelParams.from_eps(0.5)
    b = sample_path(7, 0, 0.25, 10)
    off = np.array([0.25, 0.125])
    plain = boundary_ratio(0.25, b, off, 100_000, 2, p)
    guided = boundary_ratio(0.25, b, off, 20_000, 2, p, method="guided")
    assert np.all(np.abs(plain.ratio - guided.ratio) <= 4 * np.hypot(plain.se, guided.se))


def test_results_csv(tmp_path):
    f = tmp_path / "u.csv"
    results_to_csv([(0.25, 0.5, 1.25, 0.01, 1000, 3)], f)
    assert f.read_text().splitlines() == ["t,x,mean,se,M,seed", "0.25,0.5,1.25,0.01,1000,3"]
