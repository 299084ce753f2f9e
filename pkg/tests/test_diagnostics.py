from __future__ import annotations

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from condexit.diagnostics import (
    ExitCDF,
    aggregate,
    cantor_function,
    compare_modifications,
    dyadic_concentration,
    exponent_fit,
    l2_distance,
    loglog_svg,
    shrinking_window,
    staircase_svg,
    studies_to_csv,
    summary_json,
    synthetic_cantor,
    synthetic_linear,
    synthetic_step,
    window_grid,
)
from condexit.errors import AlignmentError, DataError, ParameterError, ResolutionError, UndefinedResultError
from condexit.model import ModelParams, RunConfig, bump_density
from condexit.paths import BrownianPath, sample_path
from condexit.spde_solver import solve

GRID = np.linspace(0.0, 1.0, 2**12 + 1)
NS = [2**k for k in range(4, 11)]


def test_exit_cdf_validation():
    with pytest.raises(DataError):
        ExitCDF([0, 1, 2], [0, 0.5, 0.4])
    with pytest.raises(DataError):
        ExitCDF([0, 1], [0, 1.5])
    with pytest.raises(DataError):
        ExitCDF([0, 0], [0, 0])
    with pytest.raises(DataError):
        ExitCDF([0, 1], [0, np.nan])
    A = ExitCDF([0, 1, 2], [0, 0.5, 0.5 - 1e-12])
    assert len(A) == 3 and A.horizon == 2.0


def test_linear_ratios_equal_the_slope():
    A = synthetic_linear(GRID, 0.7)
    s = shrinking_window(A, 0.25, NS)
    np.testing.assert_allclose(s.ratios, 0.7, rtol=1e-12)
    assert s.snap == 0.0


def test_step_ratios_vanish_off_the_jump():
    A = synthetic_step(GRID, 0.9)
    s = shrinking_window(A, 0.25, NS)
    assert np.all(s.ratios == 0.0)


# the widest window, a quarter of the horizon, must fit after t0
@given(hnp.arrays(float, 257, elements=st.floats(0, 1)), st.integers(0, 192))
def test_ratios_are_nonnegative_for_any_cdf(raw, k0):
    A = ExitCDF(np.linspace(0, 1, 257), np.maximum.accumulate(raw))
    s = shrinking_window(A, k0 / 256, [4, 8, 16, 32])
    assert np.all(s.ratios >= -1e-10)


def test_unresolvable_windows():
    A = synthetic_linear(np.linspace(0, 1, 65))
    with pytest.raises(ResolutionError):
        shrinking_window(A, 0.1, [128])
    with pytest.raises(ResolutionError):
        shrinking_window(A, 0.95, [4])
    with pytest.raises(ParameterError):
        shrinking_window(A, 0.1, [0])


def test_window_grid_and_aggregate():
    A = synthetic_linear(GRID, 0.5)
    studies = window_grid(A, NS, 32)
    assert len(studies) == 32
    agg = aggregate(studies)
    assert agg["n"] == NS and agg["count"] == 32
    np.testing.assert_allclose(agg["median"], 0.5)
    with pytest.raises(DataError):
        aggregate([])


def test_concentration_of_linear_cdf():
    for q in (0.25, 0.5, 0.9):
        frac = dyadic_concentration(synthetic_linear(GRID, 0.9), 10, q)
        assert abs(frac - q) <= 2.0**-10


def test_concentration_of_a_single_jump():
    assert dyadic_concentration(synthetic_step(GRID, 0.3001), 10, 0.9) == 2.0**-10


def test_cantor_concentration_is_small_and_shrinks():
    fr = [dyadic_concentration(synthetic_cantor(14), L, 0.9) for L in (6, 8, 10, 12)]
    assert fr[2] < 0.25
    assert all(a > b for a, b in zip(fr, fr[1:]))


def test_cantor_function_values():
    np.testing.assert_allclose(cantor_function([0, 1 / 3, 0.5, 2 / 3, 1, 0.25]), [0, 0.5, 0.5, 0.5, 1, 1 / 3], atol=1e-12)


def test_concentration_errors():
    with pytest.raises(UndefinedResultError):
        dyadic_concentration(ExitCDF(GRID, np.zeros_like(GRID)), 6, 0.5)
    with pytest.raises(ParameterError):
        dyadic_concentration(synthetic_linear(GRID), 6, 1.0)
    with pytest.raises(ResolutionError):
        dyadic_concentration(synthetic_linear(np.linspace(0, 1, 17)), 6, 0.5)


@pytest.mark.parametrize("power", [1.0, 2.0])
def test_exact_power_laws(power):
    x = 2.0 ** -np.arange(4, 10)
    fit = exponent_fit(x, 3.0 * x**power)
    assert fit.slope == pytest.approx(power, abs=1e-12)
    assert fit.ci[1] - fit.ci[0] == pytest.approx(0.0, abs=1e-10)
    assert fit.resamples == 200


@given(st.floats(0.1, 3.0), st.floats(0.01, 100.0))
def test_exponent_fit_is_scale_invariant(power, scale):
    x = 2.0 ** -np.arange(3, 10)
    y = x**power * (1 + 0.05 * np.sin(np.arange(7)))
    a = exponent_fit(x, y)
    b = exponent_fit(x, scale * y)
    assert a.slope == pytest.approx(b.slope, abs=1e-9)


def test_exponent_fit_errors():
    x = 2.0 ** -np.arange(4, 10)
    with pytest.raises(DataError):
        exponent_fit(x, np.where(x > 0.01, x, 0.0))
    with pytest.raises(DataError):
        exponent_fit(x[:3], x[:3])
    fit = exponent_fit(x, x**1.5, window=(2.0**-9, 2.0**-5))
    assert fit.n == 5


@given(hnp.arrays(float, 33, elements=st.floats(-10, 10)), hnp.arrays(float, 33, elements=st.floats(-10, 10)))
def test_l2_distance_is_a_metric_on_samples(f, g):
    x = np.linspace(0, 1, 33)
    assert l2_distance(f, g, x) == pytest.approx(l2_distance(g, f, x))
    assert l2_distance(f, f, x) == 0.0
    assert l2_distance(f, g, x) <= l2_distance(f, 0 * f, x) + l2_distance(0 * g, g, x) + 1e-9


def test_modification_distance_at_time_zero_and_alignment():
    p = ModelParams.from_eps(0.5)
    b = sample_path(1, 0, 0.25, 12)
    traj = solve(bump_density(), b, p, RunConfig(), level_space=7)
    x = traj.x[::4]
    cmp_ = compare_modifications(traj, b, [0.0], x, 1000, 1, bump_density())
    assert cmp_.distances[0] == 0.0
    with pytest.raises(AlignmentError):
        compare_modifications(traj, sample_path(2, 0, 0.25, 12), [0.0], x, 1000, 1)
    with pytest.raises(AlignmentError):
        compare_modifications(traj, b, [0.0], np.array([0.3]), 1000, 1)


def test_modification_distance_when_decoupled():
    p = ModelParams.decoupled(1.0)
    b = BrownianPath.constant(0.1, 12)
    traj = solve(bump_density(), b, p, RunConfig(), level_space=9)
    x = traj.x[::16]
    cmp_ = compare_modifications(traj, b, [0.1], x, 100_000, 2, bump_density())
    assert cmp_.distances[0] <= max(3 * cmp_.se[0], 1e-3)


def test_outputs(tmp_path):
    A = synthetic_linear(GRID, 0.5)
    studies = window_grid(A, NS, 4)
    studies_to_csv(studies, tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "t0,n,window,ratio,snap" and len(lines) == 1 + 4 * len(NS)
    summary_json({"b": 1, "a": [1.5]}, tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text()) == {"a": [1.5], "b": 1}
    for svg in (loglog_svg(NS, [1, 2, 3, 4, 5, 6, 7], "t"), staircase_svg(synthetic_cantor(8), "c")):
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
