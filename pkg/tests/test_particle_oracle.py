from __future__ import annotations

import numpy as np
import pytest

from condexit.errors import AlignmentError, ParameterError
from condexit.kernel_oracle import KernelProblem, interval_mass
from condexit.model import ModelParams, RunConfig, bump_density
from condexit.particle_oracle import (
    cdf_to_csv,
    conditional_moment,
    guided_ensemble,
    histogram,
    histogram_to_csv,
    positivity_of_survival,
    resampled_survival,
    simulate_exit,
    survivor_density_l1,
)
from condexit.paths import BrownianPath, sample_path
from condexit.spde_solver import solve

PI0 = bump_density()


@pytest.fixture(scope="module")
def shared():
    p = ModelParams.from_eps(0.5)
    b = sample_path(21, 0, 0.25, 12)
    cdf, ens = simulate_exit(100_000, b, 0.25, p, seed=8)
    return p, b, cdf, ens


def test_no_exits_at_time_zero_and_cdf_monotone(shared):
    _, _, cdf, ens = shared
    assert cdf.values[0] == 0.0
    assert np.all(np.diff(cdf.values) >= 0)
    assert np.all(ens.exit_times[~ens.alive] <= ens.time)
    assert np.all((ens.survivors > 0) & (ens.survivors < 1))


def test_decoupled_exit_matches_kernel_mass():
    p = ModelParams.decoupled(1.0)
    b = BrownianPath.constant(0.1, 10)
    cdf, _ = simulate_exit(100_000, b, 0.1, p, seed=3)
    ref = 1.0 - interval_mass(KernelProblem.from_density(PI0, p.a), 0.1)
    assert abs(cdf.values[-1] - ref) <= max(3 * cdf.se[-1], 1e-3)


def test_constant_moment_is_survival(shared):
    _, _, cdf, ens = shared
    est, _ = conditional_moment(ens, np.ones(65))
    assert est == 1.0 - cdf.values[-1]
    est, _ = conditional_moment(ens, lambda x: np.ones_like(x))
    assert est == 1.0 - cdf.values[-1]


def test_nonnegative_moment(shared):
    _, _, _, ens = shared
    est, se = conditional_moment(ens, np.abs(np.sin(np.linspace(0, 7, 33))))
    assert est >= 0 and se >= 0


def test_moment_rejects_non_finite_phi(shared):
    _, _, _, ens = shared
    bad = np.ones(9)
    bad[3] = np.inf
    with pytest.raises(ParameterError):
        conditional_moment(ens, bad)
    with pytest.raises(ParameterError):
        conditional_moment(ens, lambda x: np.full_like(x, np.nan))


def test_survivor_histogram_matches_spde_density(shared):
    p, b, _, ens = shared
    traj = solve(PI0, b, p, RunConfig(), level_space=9)
    dens = traj.snapshot(0.25).values
    assert survivor_density_l1(ens, traj.x, dens) <= 0.05
    with pytest.raises(AlignmentError):
        survivor_density_l1(ens, np.linspace(0, 1, 33), np.zeros(33))


def test_relabelling_leaves_estimates_unchanged(shared):
    _, _, _, ens = shared
    perm = np.random.default_rng(0).permutation(ens.M)
    phi = lambda x: x * (1 - x)
    a, _ = conditional_moment(ens, phi)
    c, _ = conditional_moment(ens.relabel(perm), phi)
    assert a == pytest.approx(c, rel=1e-12)
    np.testing.assert_array_equal(histogram(ens)[1], histogram(ens.relabel(perm))[1])


def test_standard_error_is_calibrated():
    p = ModelParams.from_eps(0.5)
    b = sample_path(2, 0, 0.25, 10)
    finals, ses = [], []
    for s in range(100):
        cdf, _ = simulate_exit(2000, b, 0.25, p, seed=1000 + s)
        finals.append(cdf.values[-1])
        ses.append(cdf.se[-1])
    ratio = np.std(finals, ddof=1) / np.mean(ses)
    assert 1 / 1.5 <= ratio <= 1.5


def test_positivity_direct():
    p = ModelParams.from_eps(0.5)
    b = sample_path(4, 0, 0.2, 12)
    assert positivity_of_survival(b, 0.1, p, 100_000, 1) > 0
    # tiny horizon: no exits
    tiny = sample_path(4, 0, 1e-4, 6)
    assert positivity_of_survival(tiny, 1e-4, p, 100, 1) == 1.0
    # min over [0, T] >= min over [0, 2T] on the same seeds
    assert positivity_of_survival(b, 0.1, p, 5000, 2) >= positivity_of_survival(b, 0.2, p, 5000, 2)


def test_positivity_method_is_checked():
    p = ModelParams.from_eps(0.5)
    b = sample_path(4, 0, 0.2, 8)
    with pytest.raises(ParameterError):
        positivity_of_survival(b, 0.1, p, 1000, 1, method="other")
    with pytest.raises(ParameterError):
        simulate_exit(99, b, 0.1, p, 1)


def test_guided_survival_agrees_with_direct_count():
    p = ModelParams.from_eps(0.5)
    b = sample_path(7, 0, 0.25, 12)
    cdf, _ = simulate_exit(100_000, b, 0.25, p, seed=5)
    res = resampled_survival(20_000, b, 0.25, p, seed=5)
    direct = 1.0 - cdf.values
    # every 512th grid time; the guided estimate has relative error of a few per cent
    for k in range(512, 4097, 512):
        assert res.survival[k] == pytest.approx(direct[k], rel=0.1)
    assert res.extinct_step == -1
    assert np.all(np.diff(res.log_survival) <= 1e-12)


def test_guided_survival_is_positive_where_counting_gives_zero():
    p = ModelParams.from_eps(0.1)
    b = sample_path(1003, 0, 1.0, 12)
    res = resampled_survival(10_000, b, 1.0, p, seed=1)
    assert np.all(np.isfinite(res.log_survival))
    assert np.all(res.survival[:64] > 0)
    assert positivity_of_survival(b, 1.0, p, 10_000, 1, method="resampled") >= 0.0


def test_guided_ensemble_validates_starts():
    p = ModelParams.from_eps(0.5)
    with pytest.raises(ParameterError):
        guided_ensemble(np.full(50, 0.5), np.zeros(4), 0.01, p, 1)
    with pytest.raises(ParameterError):
        guided_ensemble(np.full(200, 1.5), np.zeros(4), 0.01, p, 1)


def test_csv_exports(shared, tmp_path):
    _, _, cdf, ens = shared
    cdf_to_csv(cdf, tmp_path / "a.csv")
    histogram_to_csv(ens, tmp_path / "h.csv")
    a = (tmp_path / "a.csv").read_text().splitlines()
    h = (tmp_path / "h.csv").read_text().splitlines()
    assert a[0] == "time,A,se" and len(a) == len(cdf.times) + 1
    assert h[0] == "bin_left,bin_right,count" and len(h) == 65
    assert sum(int(r.split(",")[2]) for r in h[1:]) == ens.alive.sum()
