"""Singularity analytics on exit-time CDFs and comparison of solution modifications."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AlignmentError, DataError, ParameterError, ResolutionError, UndefinedResultError
from .paths import BrownianPath

MONOTONE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ExitCDF:
    """Samples of a nondecreasing ``A_t`` with values in ``[0, 1]``."""

    times: np.ndarray
    values: np.ndarray
    se: np.ndarray | None = None

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.shape[0] < 2:
            raise DataError("times and values must be matching 1-d arrays of length >= 2")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise DataError("ExitCDF entries must be finite")
        if np.any(np.diff(t) <= 0):
            raise DataError("times must be strictly increasing")
        if np.any(v < -MONOTONE_TOL) or np.any(v > 1 + MONOTONE_TOL):
            raise DataError("A must lie in [0, 1]")
        if np.any(np.diff(v) < -MONOTONE_TOL):
            raise DataError("A must be nondecreasing")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.se is not None:
            s = np.array(self.se, dtype=float)
            if s.shape != v.shape:
                raise DataError("se must match values")
            s.flags.writeable = False
            object.__setattr__(self, "se", s)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.shape[0]


# -- synthetic references --------------------------------------------------------


def synthetic_linear(times, c: float = 1.0) -> ExitCDF:
    """``A_t = c t`` (clipped to ``[0, 1]``)."""
    t = np.asarray(times, float)
    return ExitCDF(t, np.clip(c * t, 0.0, 1.0))


def synthetic_step(times, t_star: float, height: float = 1.0) -> ExitCDF:
    """Unit (or ``height``) jump at ``t_star``: ``A_t = height 1{t >= t_star}``."""
    t = np.asarray(times, float)
    return ExitCDF(t, np.where(t >= t_star, height, 0.0))


def cantor_function(x) -> np.ndarray:
    """Triadic Cantor function on ``[0, 1]`` (53 ternary digits, exact to rounding)."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    out = np.zeros_like(x)
    done = np.zeros(x.shape, dtype=bool)
    y = x.copy()
    scale = 0.5
    for _ in range(60):
        y = 3.0 * y
        d = np.floor(y)
        d = np.minimum(d, 2.0)
        y = y - d
        hit = (d == 1.0) & ~done
        out = np.where(hit, out + scale, out)
        done |= hit
        out = np.where(~done & (d == 2.0), out + scale, out)
        scale *= 0.5
    out[x >= 1.0] = 1.0
    return out


def synthetic_cantor(level: int, horizon: float = 1.0) -> ExitCDF:
    """Devil's staircase sampled on the dyadic grid of ``level``."""
    t = np.linspace(0.0, horizon, 2**level + 1)
    v = cantor_function(t / horizon)
    return ExitCDF(t, np.maximum.accumulate(v))


# -- shrinking windows --------------------------------------------------------------


def _snap(times: np.ndarray, t: float) -> tuple[int, float]:
    k = int(np.argmin(np.abs(times - t)))
    return k, float(abs(times[k] - t))


@dataclass(frozen=True)
class IncrementStudy:
    """Difference quotients of ``A`` over shrinking windows at one base time.

    ``ratios[j]`` is ``(A(t0 + w_j) - A(t0)) / w_j`` with ``w_j`` the snapped
    window for ``n_list[j]`` (equal to ``1 / n`` when the grid contains
    ``t0 + 1/n``).  ``snap`` is the largest distance moved by any snapping.
    """

    t0: float
    n_list: tuple
    windows: np.ndarray
    ratios: np.ndarray
    snap: float

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "n": list(self.n_list),
            "window": [float(w) for w in self.windows],
            "ratio": [float(r) for r in self.ratios],
            "snap": self.snap,
        }


def shrinking_window(A: ExitCDF, t0: float, n_list) -> IncrementStudy:
    """Ratios ``n (A_{t0 + 1/n} - A_{t0})`` on the grid of ``A`` (no interpolation).

    Raises
    ------
    ResolutionError
        If a window is shorter than the grid spacing, or if ``t0 + 1/n``
        leaves the sampled range.
    """
    ns = tuple(int(n) for n in n_list)
    if not ns or min(ns) < 1:
        raise ParameterError("n_list must hold positive integers")
    times = A.times
    spacing = float(np.max(np.diff(times)))
    k0, snap = _snap(times, t0)
    if snap > 0.5 * spacing:
        raise ResolutionError(f"t0 = {t0} lies outside the sampled range")
    if t0 + 1.0 / min(ns) > A.horizon * (1 + 1e-12):
        raise ResolutionError("largest window runs past the horizon")
    windows = np.empty(len(ns))
    ratios = np.empty(len(ns))
    for j, n in enumerate(ns):
        w = 1.0 / n
        if w < spacing * (1 - 1e-9):
            raise ResolutionError(f"window 1/{n} is below the grid spacing {spacing:g}")
        k1, s = _snap(times, times[k0] + w)
        snap = max(snap, s)
        windows[j] = times[k1] - times[k0]
        ratios[j] = (A.values[k1] - A.values[k0]) / windows[j]
    return IncrementStudy(float(times[k0]), ns, windows, ratios, snap)


def window_grid(A: ExitCDF, n_list, n_points: int = 32) -> list[IncrementStudy]:
    """:func:`shrinking_window` at ``n_points`` base times spread over the admissible range."""
    span = A.horizon - 1.0 / min(n_list) - A.times[0]
    t0s = A.times[0] + span * np.arange(n_points) / max(n_points - 1, 1)
    return [shrinking_window(A, t, n_list) for t in t0s]


def aggregate(studies: Sequence[IncrementStudy]) -> dict:
    """Median and quartiles of the ratios per window size, pooled over studies."""
    if not studies:
        raise DataError("no studies to aggregate")
    ns = studies[0].n_list
    if any(s.n_list != ns for s in studies):
        raise DataError("studies use different window lists")
    R = np.array([s.ratios for s in studies])
    q1, med, q3 = np.percentile(R, [25, 50, 75], axis=0)
    return {
        "n": list(ns),
        "median": [float(v) for v in med],
        "q1": [float(v) for v in q1],
        "q3": [float(v) for v in q3],
        "count": int(R.shape[0]),
        "max_snap": float(max(s.snap for s in studies)),
    }


# -- concentration ------------------------------------------------------------------------


def dyadic_concentration(A: ExitCDF, level: int, q: float) -> float:
    """Fraction of level-``level`` dyadic intervals needed to carry ``q`` of the total increase."""
    if not 0 < q < 1:
        raise ParameterError("q must lie in (0, 1)")
    t_lo, t_hi = float(A.times[0]), A.horizon
    grid = t_lo + (t_hi - t_lo) * np.arange(2**level + 1) / 2**level
    idx = np.searchsorted(A.times, grid)
    idx = np.clip(idx, 0, len(A) - 1)
    tol = 1e-9 * (t_hi - t_lo)
    near = np.where(
        np.abs(A.times[idx] - grid) <= tol, idx, np.clip(idx - 1, 0, len(A) - 1)
    )
    if np.any(np.abs(A.times[near] - grid) > tol):
        raise ResolutionError(f"A is not sampled on the level-{level} dyadic grid")
    inc = np.diff(A.values[near])
    total = float(A.values[near[-1]] - A.values[near[0]])
    if total <= 0:
        raise UndefinedResultError("A has no increase over the range")
    csum = np.cumsum(np.sort(inc)[::-1])
    need = int(np.searchsorted(csum, q * total * (1 - 1e-12))) + 1
    return min(need, 2**level) / 2**level


# -- exponent fit ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares slope of ``log profile`` against ``log x`` with a bootstrap interval."""

    slope: float
    intercept: float
    ci: tuple[float, float]
    n: int
    resamples: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "ci": list(self.ci), "n": self.n, "resamples": self.resamples}


def exponent_fit(x, profile, window=None, resamples: int = 200, seed: int = 0, level: float = 0.95) -> ExponentFit:
    """Power-law exponent of a sup-profile.

    Parameters
    ----------
    x, profile
        Positive abscissae and profile values.
    window
        Optional ``(x_lo, x_hi)``; only points inside are fitted.
    resamples
        Residual-bootstrap resamples for the confidence interval.
    """
    x = np.asarray(x, float)
    y = np.asarray(profile, float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and profile must be matching 1-d arrays")
    if window is not None:
        keep = (x >= window[0]) & (x <= window[1])
        x, y = x[keep], y[keep]
    if np.any(x <= 0) or np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DataError("x and profile entries must be positive")
    if x.size < 3 or np.log2(x.max() / x.min()) < 3 - 1e-12:
        raise DataError("fit window must span at least three octaves")
    lx, ly = np.log(x), np.log(y)
    X = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    fitted = X @ coef
    resid = ly - fitted
    gen = np.random.default_rng(seed)
    draws = gen.integers(0, resid.size, size=(resamples, resid.size))
    Yb = fitted[None, :] + resid[draws]
    slopes = np.linalg.lstsq(X, Yb.T, rcond=None)[0][0]
    alpha = 0.5 * (1 - level)
    lo, hi = np.quantile(slopes, [alpha, 1 - alpha])
    return ExponentFit(float(coef[0]), float(coef[1]), (float(lo), float(hi)), int(x.size), resamples)


# -- modification comparison ---------------------------------------------------------------


def l2_distance(f, g, x) -> float:
    """Trapezoidal ``L2`` distance between two sampled functions."""
    d = np.asarray(f, float) - np.asarray(g, float)
    return float(np.sqrt(np.trapezoid(d * d, np.asarray(x, float))))


@dataclass(frozen=True)
class ModificationComparison:
    """Per time: ``L2`` distance between the density and the moving-domain solution."""

    times: np.ndarray
    distances: np.ndarray
    se: np.ndarray
    x_grid: np.ndarray
    M: int
    seed: int

    def rows(self):
        return zip(self.times, self.distances, self.se)


def compare_modifications(spde_traj, b: BrownianPath, times, x_grid, M: int, seed: int, pi0=None) -> ModificationComparison:
    """Compare ``pi_t(x)`` with ``u_t(x - sigma b_t)`` over ``x_grid`` at each time.

    The moving-domain estimate runs on the time grid of the density solver,
    so both sides see the same values of ``b``.  ``se`` is the ``L2`` norm of
    the pointwise standard errors, an aggregate noise floor for the distance.

    Raises
    ------
    AlignmentError
        If ``b`` is not the path the density was computed from, or if a time
        or a grid point is not stored in the trajectory.
    """
    from . import mc_frontier

    if spde_traj.path_identity != b.identity or spde_traj.path_level != b.level:
        raise AlignmentError("b differs from the path used by the density solver")
    x_grid = np.asarray(x_grid, float)
    nodes = spde_traj.x
    cols = np.searchsorted(nodes, x_grid)
    cols = np.clip(cols, 0, nodes.size - 1)
    if np.any(np.abs(nodes[cols] - x_grid) > 1e-12):
        raise AlignmentError("x_grid must consist of solver grid nodes")
    shift = int(round(np.log2(b.horizon / spde_traj.horizon)))
    level = spde_traj.level_time + shift
    p = spde_traj.params
    out_t, out_d, out_s = [], [], []
    for t in times:
        field = spde_traj.snapshot(t)
        dens = field.values[cols]
        if t == 0:
            est = np.asarray(pi0(x_grid) if pi0 is not None else dens)
            se = np.zeros_like(dens)
        else:
            shift_b = p.sigma * b.at(t)
            z = np.clip(x_grid - shift_b, -shift_b, 1.0 - shift_b)
            est, se = mc_frontier.u_estimate(t, z, b, M, seed, p, pi0, level)
        out_t.append(float(t))
        out_d.append(l2_distance(dens, est, x_grid))
        out_s.append(l2_distance(se, 0.0 * se, x_grid))
    return ModificationComparison(np.array(out_t), np.array(out_d), np.array(out_s), x_grid, int(M), int(seed))


# -- output -----------------------------------------------------------------------------------


def studies_to_csv(studies: Sequence[IncrementStudy], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t0", "n", "window", "ratio", "snap"])
        for s in studies:
            for n, win, r in zip(s.n_list, s.windows, s.ratios):
                w.writerow([repr(s.t0), n, repr(float(win)), repr(float(r)), repr(s.snap)])


def summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


_W, _H, _PAD = 480, 360, 48


def _frame(title: str, xlabel: str, ylabel: str, body: str) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">'
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" fill="none" stroke="black"/>'
        f'<text x="{_W / 2}" y="20" text-anchor="middle">{title}</text>'
        f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle">{xlabel}</text>'
        f'<text x="12" y="{_H / 2}" transform="rotate(-90 12 {_H / 2})" text-anchor="middle">{ylabel}</text>'
        f"{body}</svg>\n"
    )


def _scale(v: np.ndarray, lo_px: float, hi_px: float) -> np.ndarray:
    span = float(np.ptp(v)) if v.size else 0.0
    return lo_px + (v - (v.min() if v.size else 0.0)) / (span if span > 0 else 1.0) * (hi_px - lo_px)


def loglog_svg(x, y, title: str = "", xlabel: str = "x", ylabel: str = "y") -> str:
    """Log-log scatter plot as standalone SVG text (nonpositive points dropped)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    sx = _scale(np.log10(x[keep]), _PAD, _W - _PAD)
    sy = _scale(np.log10(y[keep]), _H - _PAD, _PAD)
    pts = "".join(f'<circle cx="{u:.2f}" cy="{v:.2f}" r="3"/>' for u, v in zip(sx, sy))
    return _frame(title, f"log10 {xlabel}", f"log10 {ylabel}", pts)


def staircase_svg(A: ExitCDF, title: str = "") -> str:
    """Polyline of ``A_t`` against ``t`` as standalone SVG text."""
    sx = _PAD + (A.times - A.times[0]) / (A.horizon - A.times[0]) * (_W - 2 * _PAD)
    sy = (_H - _PAD) - np.clip(A.values, 0, 1) * (_H - 2 * _PAD)
    pts = " ".join(f"{u:.2f},{v:.2f}" for u, v in zip(sx, sy))
    return _frame(title, "t", "A", f'<polyline fill="none" stroke="black" points="{pts}"/>')
