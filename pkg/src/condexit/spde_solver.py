"""Grid solver for the filtering equation on ``(0, 1)``.

The unnormalised conditional density solves

    d pi = (a/2) pi'' dt - sigma pi' db,      pi(t, 0) = pi(t, 1) = 0,

and the conditional exit CDF is ``A_t = 1 - int_0^1 pi_t``.  With ``b`` known
at the grid times, one step maps ``pi`` to

    pi'(x) = int_0^1 pi(y) g(x - y - sigma db) S(y, x) dy,

where ``g`` is the centred Gaussian density of variance ``sigma1^2 dt`` and
``S`` is the probability that a Brownian bridge of variance ``a dt`` from
``y`` to ``x`` stays in ``(0, 1)`` (the observation path between grid times
is itself an unobserved bridge, hence the full ``a``).  The integral is a
trapezoidal sum on the grid with a discrete Gaussian normalised to unit mass.

Every weight is nonnegative and every column sums to at most one, so the
discrete density stays nonnegative and its mass can only fall.  The clamp
accounting is still carried out (and reported) so that a violation would be
visible rather than silent.  The step is exact in time for the grid path; the
only constraint is that the kernel is resolved by the grid,
``sigma1 sqrt(dt) >= 0.75 dx``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .diagnostics import ExitCDF
from .errors import AlignmentError, ConfigurationError, DataError, ParameterError, SolverFailure
from .model import InitialDensity, ModelParams, RunConfig
from .paths import BrownianPath

MAX_TIME_LEVEL = 27


@dataclass(frozen=True, eq=False)
class DensityField:
    """Nodal values of ``pi_t`` at ``x_j = j / 2**level``."""

    level: int
    values: np.ndarray
    time: float = 0.0
    clamped_mass: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (2**self.level + 1,):
            raise DataError(f"level-{self.level} field needs {2**self.level + 1} values")
        if v[0] != 0.0 or v[-1] != 0.0:
            raise DataError("density must vanish at both walls")
        if not np.all(np.isfinite(v)):
            raise DataError("density values must be finite")
        if self.clamped_mass < 0:
            raise DataError("clamped mass cannot be negative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dx(self) -> float:
        return 1.0 / 2**self.level

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, 2**self.level + 1)

    @property
    def mass(self) -> float:
        return trapezoid_mass(self.values, self.dx)

    @classmethod
    def from_density(cls, pi0: InitialDensity, level: int) -> "DensityField":
        return cls(level, pi0.sample_grid(level), 0.0, 0.0)

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, ["x", "value"], zip(self.x, self.values))


def trapezoid_mass(u: np.ndarray, dx: float) -> float:
    return float(dx * (np.sum(u) - 0.5 * (u[0] + u[-1])))


def write_csv(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v) for v in row])


# -- one step ----------------------------------------------------------------

RHO_MIN = 0.75  # hard floor on sigma1 sqrt(dt) / dx
RHO_DEFAULT = 1.0  # default resolution when the time level is picked automatically
KERNEL_SDS = 8.0  # Gaussian kernel truncated at this many standard deviations
WALL_SDS = 20.0  # wall factor skipped when x x' > WALL_SDS * a dt (factor > 1 - e^-40)


def resolution(params: ModelParams, dt: float, dx: float) -> float:
    """Width of the one-step transition kernel in grid cells, ``sigma1 sqrt(dt) / dx``."""
    return params.sigma1 * math.sqrt(dt) / dx


def check_step_contract(params: ModelParams, dt: float, dx: float) -> None:
    rho = resolution(params, dt, dx)
    if rho < RHO_MIN * (1 - 1e-12):
        raise ConfigurationError(
            f"time step too small for the grid: sigma1 sqrt(dt)/dx = {rho:.3f} < {RHO_MIN}"
        )


def kernel_weights(dt: float, db: float, dx: float, params: ModelParams) -> tuple[int, np.ndarray]:
    """Normalised discrete Gaussian ``G_k``, ``k = k0 .. k0 + len - 1``.

    ``G_k`` is proportional to the density of ``N(sigma db, sigma1^2 dt)`` at
    ``k dx`` and sums to 1, so interior mass is carried over exactly.
    """
    s = params.sigma * db
    sd = params.sigma1 * math.sqrt(dt)
    k0 = int(math.floor((s - KERNEL_SDS * sd) / dx))
    k1 = int(math.ceil((s + KERNEL_SDS * sd) / dx))
    k = np.arange(k0, k1 + 1)
    g = np.exp(-0.5 * ((k * dx - s) / sd) ** 2)
    return k0, g / g.sum()


def step(
    field: DensityField, dt: float, db: float, params: ModelParams, clamp: bool = True
) -> DensityField:
    """Advance one grid step (dense reference implementation).

    ``u'(x_i) = sum_j G_{i-j} S(x_j, x_i) u(x_j)`` where ``G`` is the discrete
    Gaussian of :func:`kernel_weights` and ``S`` is the probability that a
    Brownian bridge of variance ``a dt`` from ``x_j`` to ``x_i`` stays inside
    ``(0, 1)``, taken as the product of the two one-wall factors.  All
    weights are nonnegative, so ``clamp`` never removes anything; it is kept
    for interface symmetry with the compiled solver.
    """
    dx = field.dx
    check_step_contract(params, dt, dx)
    u = np.asarray(field.values)
    n = u.shape[0] - 1
    x = np.linspace(0.0, 1.0, n + 1)
    k0, g = kernel_weights(dt, db, dx, params)
    diff = np.arange(n + 1)[:, None] - np.arange(n + 1)[None, :]  # i - j
    idx = diff - k0
    ok = (idx >= 0) & (idx < g.shape[0])
    w = np.where(ok, g[np.clip(idx, 0, g.shape[0] - 1)], 0.0)
    v = params.a * dt
    w *= -np.expm1(-2 * np.outer(x, x) / v) * -np.expm1(-2 * np.outer(1 - x, 1 - x) / v)
    new = w @ u
    new[0] = new[-1] = 0.0
    clamped = field.clamped_mass
    if clamp:
        neg = new < 0
        clamped += float(-dx * new[neg].sum())
        new[neg] = 0.0
    return DensityField(field.level, new, field.time + dt, clamped)


# -- compiled time loop --------------------------------------------------------


@nb.njit(cache=True)
def _march(u0, db, dx, dt, a, sigma, sigma1, stride, snap_every, clamp, clamp_tol, zeta, dzeta, d2zeta, use_zeta):
    n = u0.shape[0] - 1
    n_steps = db.shape[0]
    n_out = n_steps // stride
    n_snap = n_steps // snap_every
    sd = sigma1 * math.sqrt(dt)
    v = a * dt
    wall = math.sqrt(WALL_SDS * v)
    x = np.empty(n + 1)
    for j in range(n + 1):
        x[j] = j * dx

    u = u0.copy()
    new = np.zeros(n + 1)
    mass_out = np.empty(n_out + 1)
    snaps = np.empty((n_snap + 1, n + 1))
    sup = u0.copy()
    zeta_lhs = np.zeros(n_out + 1)
    zeta_rhs = np.zeros(n_out + 1)
    kmax = int(2 * KERNEL_SDS * sd / dx) + 3
    g = np.empty(kmax + 1)

    mass = 0.0
    for j in range(1, n):
        mass += u[j]
    mass *= dx
    mass_out[0] = mass
    snaps[0, :] = u
    min_pre = 0.0
    clamped = 0.0
    max_rise = -np.inf
    failed = -1

    pz = pz1 = pz2 = 0.0
    drift = stoch = 0.0
    if use_zeta:
        for j in range(1, n):
            pz += u[j] * zeta[j]
            pz1 += u[j] * dzeta[j]
            pz2 += u[j] * d2zeta[j]
        pz *= dx
        pz1 *= dx
        pz2 *= dx
    pz0 = pz

    for k in range(n_steps):
        s = sigma * db[k]
        k0 = int(math.floor((s - KERNEL_SDS * sd) / dx))
        k1 = int(math.ceil((s + KERNEL_SDS * sd) / dx))
        nk = k1 - k0 + 1
        if nk > g.shape[0]:
            g = np.empty(nk)
        tot = 0.0
        for q in range(nk):
            z = ((k0 + q) * dx - s) / sd
            g[q] = math.exp(-0.5 * z * z)
            tot += g[q]
        for q in range(nk):
            g[q] /= tot

        for i in range(1, n):
            acc = 0.0
            xi = x[i]
            jlo = max(1, i - k1)
            jhi = min(n - 1, i - k0)
            for j in range(jlo, jhi + 1):
                w = g[i - j - k0]
                xj = x[j]
                if xi < wall or xj < wall:
                    w *= -math.expm1(-2.0 * xi * xj / v)
                if 1.0 - xi < wall or 1.0 - xj < wall:
                    w *= -math.expm1(-2.0 * (1.0 - xi) * (1.0 - xj) / v)
                acc += w * u[j]
            new[i] = acc

        new_mass = 0.0
        cut = 0.0
        for i in range(1, n):
            val = new[i]
            if val < min_pre:
                min_pre = val
            if val < 0.0 and clamp:
                cut -= val
                val = 0.0
            u[i] = val
            new_mass += val
            if val > sup[i]:
                sup[i] = val
        new_mass *= dx
        clamped += cut * dx
        rise = new_mass - mass
        if rise > max_rise:
            max_rise = rise
        mass = new_mass

        if use_zeta:
            qz = qz1 = qz2 = 0.0
            for j in range(1, n):
                qz += u[j] * zeta[j]
                qz1 += u[j] * dzeta[j]
                qz2 += u[j] * d2zeta[j]
            qz *= dx
            qz1 *= dx
            qz2 *= dx
            drift += 0.25 * a * dt * (pz2 + qz2)
            stoch += sigma * db[k] * pz1
            pz, pz1, pz2 = qz, qz1, qz2

        if (k + 1) % stride == 0:
            o = (k + 1) // stride
            mass_out[o] = mass
            if use_zeta:
                zeta_lhs[o] = pz - pz0
                zeta_rhs[o] = drift + stoch
        if (k + 1) % snap_every == 0:
            snaps[(k + 1) // snap_every, :] = u
        if clamp and clamped > clamp_tol:
            failed = k + 1
            break

    return mass_out, snaps, sup, min_pre, clamped, max_rise, failed, zeta_lhs, zeta_rhs


# -- trajectories --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolverTrajectory:
    """Output of :func:`solve`.

    ``cdf`` holds ``A = 1 - mass`` on the output grid; ``snapshots`` are full
    density fields on the (coarser) snapshot grid.  The accounting fields
    summarise the whole run: the most negative pre-clamp value, the clamped
    mass, and the largest one-step increase of the discrete mass.
    """

    params: ModelParams
    level_space: int
    level_time: int
    horizon: float
    path_identity: tuple
    path_level: int
    out_times: np.ndarray
    mass: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    sup_profile: np.ndarray
    min_preclamp: float
    clamped_mass: float
    max_mass_rise: float
    completed: bool = True
    zeta_lhs: np.ndarray | None = None
    zeta_rhs: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def cdf(self) -> ExitCDF:
        return ExitCDF(self.out_times, np.clip(1.0 - self.mass, 0.0, 1.0))

    @property
    def A(self) -> np.ndarray:
        return 1.0 - self.mass

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, 2**self.level_space + 1)

    @property
    def dt(self) -> float:
        return self.horizon / 2**self.level_time

    def snapshot(self, t: float) -> DensityField:
        """The stored density at snapshot time ``t`` (no interpolation)."""
        k = np.flatnonzero(np.isclose(self.snapshot_times, t, rtol=0, atol=1e-12 * max(1.0, self.horizon)))
        if k.size == 0:
            raise AlignmentError(f"no snapshot stored at t = {t!r}")
        return DensityField(self.level_space, self.snapshots[k[0]], float(self.snapshot_times[k[0]]))

    def to_csv(self, path: str | Path) -> None:
        """Columns ``time, A, mass, clamped_mass`` (run total in the last column)."""
        rows = ((t, 1.0 - m, m, self.clamped_mass) for t, m in zip(self.out_times, self.mass))
        write_csv(path, ["time", "A", "mass", "clamped_mass"], rows)

    def snapshot_csv(self, t: float, path: str | Path) -> None:
        self.snapshot(t).to_csv(path)


def default_time_level(params: ModelParams, level_space: int, horizon: float, rho: float = RHO_DEFAULT) -> int:
    """Finest time level whose kernel width ``sigma1 sqrt(dt) / dx`` is at least ``rho``."""
    dx = 2.0 ** (-level_space)
    dt_min = (rho * dx / params.sigma1) ** 2
    level = int(math.floor(math.log2(horizon / dt_min)))
    while level > 0 and resolution(params, horizon / 2**level, dx) < rho * (1 - 1e-12):
        level -= 1
    return max(level, 1)


def _zeta_arrays(zeta, level: int):
    x = np.linspace(0.0, 1.0, 2**level + 1)
    return np.asarray(zeta(x), float), np.asarray(zeta.d1(x), float), np.asarray(zeta.d2(x), float)


def solve(
    pi0: InitialDensity | np.ndarray,
    b: BrownianPath,
    params: ModelParams,
    config: RunConfig | None = None,
    *,
    level_space: int | None = None,
    level_time: int | None = None,
    output_level: int | None = None,
    snapshot_level: int = 4,
    horizon: float | None = None,
    clamp: bool = True,
    zeta=None,
    raise_on_failure: bool = True,
) -> SolverTrajectory:
    """Run the scheme on the time grid of ``b`` restricted to ``level_time``.

    Parameters
    ----------
    pi0
        Initial density (sampled on the grid) or nodal values.
    b
        Observation path; its level must be at least ``level_time`` and its
        horizon at least ``horizon``.  With ``horizon < b.horizon`` the run
        stops at ``horizon``, which must be a dyadic fraction of ``b.horizon``.
    config
        Supplies the defaults for the grid levels and tolerances.
    zeta
        Optional test function (see :class:`BumpTest`); the weak-form
        accumulators are then filled.
    """
    config = config or RunConfig()
    ls = level_space if level_space is not None else config.level_space
    horizon = float(horizon if horizon is not None else b.horizon)
    if horizon > b.horizon * (1 + 1e-12):
        raise ParameterError("path horizon shorter than the requested run")
    ratio = b.horizon / horizon
    shift = int(round(math.log2(ratio)))
    if abs(2.0**shift - ratio) > 1e-9 * ratio:
        raise ParameterError("run horizon must be the path horizon over a power of 2")
    if level_time is None:
        level_time = config.level_time or min(
            default_time_level(params, ls, horizon, config.resolution), b.level - shift
        )
    if level_time + shift > b.level:
        raise ConfigurationError(
            f"path level {b.level} is coarser than the solver time level {level_time} (+{shift})"
        )
    if level_time > MAX_TIME_LEVEL:
        raise ConfigurationError(f"time level {level_time} is above the limit {MAX_TIME_LEVEL}")
    dt = horizon / 2**level_time
    dx = 1.0 / 2**ls
    check_step_contract(params, dt, dx)

    if isinstance(pi0, InitialDensity):
        u0 = pi0.sample_grid(ls)
    else:
        u0 = DensityField(ls, pi0).values.copy()
    vals = b.restrict(level_time + shift).values[: 2**level_time + 1]
    db = np.diff(vals) if params.sigma > 0 else np.zeros(2**level_time)

    out_level = min(output_level if output_level is not None else config.output_level, level_time)
    snap_level = min(snapshot_level, level_time)
    stride = 2 ** (level_time - out_level)
    snap_every = 2 ** (level_time - snap_level)
    if zeta is not None:
        z, z1, z2 = _zeta_arrays(zeta, ls)
    else:
        z = z1 = z2 = np.zeros(1)
    mass, snaps, sup, min_pre, clamped, rise, failed, zl, zr = _march(
        u0, db, dx, dt, params.a, params.sigma, params.sigma1, stride, snap_every, clamp, config.clamp_tol, z, z1, z2, zeta is not None
    )
    n_out = 2**out_level if failed < 0 else failed // stride
    n_snap = 2**snap_level if failed < 0 else failed // snap_every
    traj = SolverTrajectory(
        params=params,
        level_space=ls,
        level_time=level_time,
        horizon=horizon,
        path_identity=b.identity,
        path_level=b.level,
        out_times=np.arange(n_out + 1) * (horizon / 2**out_level),
        mass=mass[: n_out + 1],
        snapshot_times=np.arange(n_snap + 1) * (horizon / 2**snap_level),
        snapshots=snaps[: n_snap + 1],
        sup_profile=sup,
        min_preclamp=float(min_pre),
        clamped_mass=float(clamped),
        max_mass_rise=float(rise) if np.isfinite(rise) else 0.0,
        completed=failed < 0,
        zeta_lhs=zl[: n_out + 1] if zeta is not None else None,
        zeta_rhs=zr[: n_out + 1] if zeta is not None else None,
    )
    if failed >= 0 and raise_on_failure:
        raise SolverFailure(
            f"clamped mass {clamped:.3e} exceeded tolerance {config.clamp_tol:.1e} at step {failed}", traj
        )
    return traj


# -- weak form -----------------------------------------------------------------


@dataclass(frozen=True)
class BumpTest:
    """Smooth test function ``exp(-1 / (1 - ((x - center) / radius)^2))`` with exact derivatives."""

    center: float = 0.5
    radius: float = 0.3
    scale: float = 1.0

    def __post_init__(self):
        if not (self.radius > 0 and self.center - self.radius > 0 and self.center + self.radius < 1):
            raise ParameterError("test function support must lie strictly inside (0, 1)")

    def _parts(self, x):
        r = (np.asarray(x, float) - self.center) / self.radius
        inside = np.abs(r) < 1
        ri = np.where(inside, r, 0.0)
        q = 1 - ri * ri
        f = np.where(inside, self.scale * np.exp(-1 / q), 0.0)
        g1 = -2 * ri / q**2
        g2 = -2 / q**2 - 8 * ri * ri / q**3
        return f, g1, g2

    def __call__(self, x):
        return self._parts(x)[0]

    def d1(self, x):
        f, g1, _ = self._parts(x)
        return f * g1 / self.radius

    def d2(self, x):
        f, g1, g2 = self._parts(x)
        return f * (g1 * g1 + g2) / self.radius**2


class ZeroTest:
    """The test function ``zeta = 0``."""

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, float))

    d1 = d2 = __call__


def weak_form_residual(
    traj: SolverTrajectory, zeta, b: BrownianPath, pi0: InitialDensity | None = None, config: RunConfig | None = None
) -> float:
    """Largest defect of the weak identity over the output times.

    The identity tested is
    ``(pi_t, z) - (pi_0, z) = int_0^t (a/2)(pi_s, z'') ds + int_0^t sigma (pi_s, z') db_s``
    with trapezoidal space sums, trapezoidal time sums for the drift and
    left-point sums for the stochastic term.  When ``traj`` was produced
    without the test function, the run is repeated with it registered.
    """
    if not (hasattr(zeta, "d1") and hasattr(zeta, "d2")):
        raise ParameterError("zeta must provide analytic derivatives d1 and d2")
    if traj.path_identity != b.identity:
        raise AlignmentError("trajectory was computed on a different path")
    if traj.zeta_lhs is None:
        traj = solve(
            pi0 if pi0 is not None else (config or RunConfig()).pi0,
            b,
            traj.params,
            config,
            level_space=traj.level_space,
            level_time=traj.level_time,
            output_level=int(round(math.log2(len(traj.out_times) - 1))),
            horizon=traj.horizon,
            zeta=zeta,
        )
    return float(np.max(np.abs(traj.zeta_lhs - traj.zeta_rhs)))
