"""Command-line experiment runner.

Usage::

    condexit <kind> [--config FILE] [--seed N] [--out DIR] [--plots] [--<key> VALUE ...]

``kind`` is one of ``solve``, ``compare``, ``singularity``, ``bounds``,
``lemma31`` or ``calibrate``.  Every configuration key is also a flag of the
same name.  Outputs are CSV (shortest round-trip decimals) and JSON with
sorted keys, written atomically, and listed in ``manifest.json`` with the
configuration hash, the seeds and a SHA-256 of each file.  Identical plans
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import bounds, diagnostics, kernel_oracle, mc_frontier, particle_oracle, report, spde_solver
from .errors import CondExitError, DataError, SolverFailure, UsageError
from .model import CONFIG_KEYS, ModelParams, RunConfig, load_config
from .paths import BrownianPath, sample_path

KINDS = ("solve", "compare", "singularity", "bounds", "lemma31", "calibrate")
EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_ERROR = 0, 2, 3, 4
WINDOW_NS = tuple(2**k for k in range(4, 11))
T0_POINTS = 32
FIT_WINDOW = (2.0**-9, 2.0**-4)


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str
    config: RunConfig
    out: Path
    plots: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")


class _Outputs(dict):
    """File name to content, plus the seeds used."""

    def __init__(self):
        super().__init__()
        self.seeds: list[int] = []


def _path_level(cfg: RunConfig) -> int:
    return max(cfg.particle_level, cfg.frontier_level)


def _observation(cfg: RunConfig, seed: int) -> BrownianPath:
    return sample_path(seed, 0, cfg.horizon, _path_level(cfg))


def _cdf_csv(cdf: diagnostics.ExitCDF) -> str:
    return report.csv_text(["time", "A"], zip(cdf.times, cdf.values))


def _traj_summary(tr: spde_solver.SolverTrajectory) -> dict:
    return {
        "level_space": tr.level_space,
        "level_time": tr.level_time,
        "A_T": float(tr.A[-1]),
        "survival_T": float(tr.mass[-1]),
        "min_preclamp": tr.min_preclamp,
        "clamped_mass": tr.clamped_mass,
        "max_mass_rise": tr.max_mass_rise,
        "completed": tr.completed,
    }


# -- experiments ---------------------------------------------------------------


def _solve(plan: ExperimentPlan, out: _Outputs) -> None:
    cfg = plan.config
    b = _observation(cfg, cfg.seed)
    out.seeds.append(cfg.seed)
    out["path.csv"] = report.csv_text(["time", "value"], zip(b.times, b.values))
    tr = spde_solver.solve(cfg.pi0, b, cfg.params, cfg)
    out["spde_cdf.csv"] = _cdf_csv(tr.cdf)
    out["spde_density_T.csv"] = report.csv_text(["x", "value"], zip(tr.x, tr.snapshots[-1]))
    out["spde_summary.json"] = report.json_text(_traj_summary(tr))
    if plan.plots:
        out["spde_cdf.svg"] = diagnostics.staircase_svg(tr.cdf, "A_t")


def _compare(plan: ExperimentPlan, out: _Outputs) -> None:
    cfg = plan.config
    b = _observation(cfg, cfg.seed)
    out.seeds.append(cfg.seed)
    p = cfg.params
    tr = spde_solver.solve(cfg.pi0, b, p, cfg, snapshot_level=4)
    T = cfg.horizon
    cdf, ens = particle_oracle.simulate_exit(cfg.replicas_particles, b, T, p, cfg.seed + 1, cfg.pi0, cfg.particle_level)
    x_grid = np.linspace(0.0, 1.0, cfg.x_points)
    times = [0.0, T / 2, T]
    cmp = diagnostics.compare_modifications(tr, b, times, x_grid, cfg.replicas_frontier, cfg.seed + 2, cfg.pi0)
    # mass of the moving-domain solution at T, by the trapezoid rule over the x grid
    shift = p.sigma * b.at(T)
    u, u_se = mc_frontier.u_estimate(
        T, np.clip(x_grid - shift, -shift, 1 - shift), b, cfg.replicas_frontier, cfg.seed + 2, p, cfg.pi0,
        tr.level_time + int(round(math.log2(b.horizon / tr.horizon))),
    )
    front_mass = float(np.trapezoid(u, x_grid))
    front_se = float(np.sqrt(np.trapezoid(u_se**2, x_grid)))
    rows = [
        ("spde", float(tr.A[-1]), 0.0),
        ("particles", float(cdf.values[-1]), float(cdf.se[-1])),
        ("mc_frontier", 1.0 - front_mass, front_se),
    ]
    out.seeds.extend([cfg.seed + 1, cfg.seed + 2])
    out["compare_table.csv"] = report.csv_text(["solver", "A_T", "se"], rows)
    out["modification_l2.csv"] = report.csv_text(["time", "l2", "se"], cmp.rows())
    out["compare_summary.json"] = report.json_text(
        {
            "spde": _traj_summary(tr),
            "A_T": {name: {"value": v, "se": s} for name, v, s in rows},
            "l2": dict(zip([report.fmt(t) for t in cmp.times], cmp.distances)),
        }
    )
    out["particle_cdf.csv"] = report.csv_text(["time", "A", "se"], zip(cdf.times, cdf.values, cdf.se))


def _sup_profile_fit(tr: spde_solver.SolverTrajectory) -> dict:
    x = tr.x
    keep = (x >= FIT_WINDOW[0] - 1e-15) & (x <= FIT_WINDOW[1] + 1e-15)
    try:
        fit = diagnostics.exponent_fit(x[keep], tr.sup_profile[keep])
        return fit.to_dict()
    except DataError as exc:
        return {"slope": None, "reason": str(exc)}


def singularity_study(cfg: RunConfig, params: ModelParams, seeds) -> tuple[dict, list, list]:
    """Shrinking-window statistics over seeds; returns (aggregate, studies, per-seed fits)."""
    studies, fits = [], []
    for s in seeds:
        b = sample_path(s, 0, cfg.horizon, _path_level(cfg))
        tr = spde_solver.solve(cfg.pi0, b, params, cfg)
        studies.extend(diagnostics.window_grid(tr.cdf, WINDOW_NS, T0_POINTS))
        fits.append(_sup_profile_fit(tr))
    return diagnostics.aggregate(studies), studies, fits


def _singularity(plan: ExperimentPlan, out: _Outputs) -> None:
    cfg = plan.config
    seeds = [cfg.seed + i for i in range(cfg.n_seeds)]
    out.seeds.extend(seeds)
    agg, studies, fits = singularity_study(cfg, cfg.params, seeds)
    # same signal law (total diffusion a), observation switched off
    control = ModelParams.decoupled(math.sqrt(cfg.params.a))
    agg_c, studies_c, _ = singularity_study(cfg, control, seeds[:1])
    slopes = [f["slope"] for f in fits if f.get("slope") is not None]
    eps = cfg.params.eps
    summary = {
        "windows": agg,
        "control_windows": agg_c,
        "trend_ratio": agg["median"][-1] / agg["median"][0] if agg["median"][0] > 0 else None,
        "control_spread": (max(agg_c["median"]) - min(agg_c["median"])) / max(agg_c["median"]) if max(agg_c["median"]) > 0 else None,
        "exponent_fits": fits,
        "median_slope": float(np.median(slopes)) if slopes else None,
        "nu_remark": bounds.nu_remark(cfg.bound_mu, eps) if eps > 0 else None,
    }
    buf = []
    for s in studies:
        for n, w, r in zip(s.n_list, s.windows, s.ratios):
            buf.append((s.t0, n, w, r, s.snap))
    out["windows.csv"] = report.csv_text(["t0", "n", "window", "ratio", "snap"], buf)
    out["singularity_summary.json"] = report.json_text(summary)
    if plan.plots:
        out["windows.svg"] = diagnostics.loglog_svg(agg["n"], agg["median"], "median ratio", "n", "ratio")


def _bounds(plan: ExperimentPlan, out: _Outputs) -> None:
    cfg = plan.config
    out.seeds.extend([cfg.seed, cfg.seed + 1])
    bc = bounds.pipeline(
        cfg.params.eps, cfg.bound_c, cfg.bound_d, cfg.bound_delta, cfg.bound_mu,
        M_range=cfg.replicas_bounds, M_gamma=cfg.replicas_bounds, seed=cfg.seed,
    )
    out["bounds.json"] = bc.to_json()


def _lemma31(plan: ExperimentPlan, out: _Outputs) -> None:
    cfg = plan.config
    out.seeds.append(cfg.seed)
    rep = bounds.lemma31_check(cfg.lemma_gamma, cfg.lemma_beta, cfg.lemma_K, cfg.lemma_seeds, cfg.seed)
    out["lemma31.json"] = report.json_text(rep.to_dict())
    out["lemma31_frequency.csv"] = report.csv_text(
        ["m", "frequency", "se"], zip(range(len(rep.frequency)), rep.frequency, rep.frequency_se)
    )


def calibrate(cfg: RunConfig | None = None, levels=range(7, 11), horizon: float = 0.1) -> dict:
    """Diffusion-only agreement with the series solution across spatial levels."""
    cfg = cfg or RunConfig()
    p = ModelParams.decoupled(1.0)
    prob = kernel_oracle.KernelProblem.from_density(cfg.pi0, p.a)
    rows = []
    for L in levels:
        tl = spde_solver.default_time_level(p, L, horizon, cfg.resolution)
        tr = spde_solver.solve(cfg.pi0, BrownianPath.constant(horizon, tl), p, cfg, level_space=L)
        err = float(np.max(np.abs(tr.snapshots[-1] - kernel_oracle.interval_solution(prob, horizon, tr.x))))
        rows.append(
            {
                "level_space": L,
                "level_time": tl,
                "sup_error": err,
                "min_preclamp": tr.min_preclamp,
                "clamped_mass": tr.clamped_mass,
                "clamp_ok": tr.clamped_mass <= cfg.clamp_tol,
            }
        )
    orders = []
    for a, b in zip(rows, rows[1:]):
        orders.append(math.log2(a["sup_error"] / b["sup_error"]) if b["sup_error"] > 0 else None)
    return {"horizon": horizon, "levels": rows, "observed_orders": orders, "clamp_tol": cfg.clamp_tol}


def _calibrate(plan: ExperimentPlan, out: _Outputs) -> None:
    out["calibrate.json"] = report.json_text(calibrate(plan.config))


_RUNNERS: dict[str, Callable[[ExperimentPlan, _Outputs], None]] = {
    "solve": _solve,
    "compare": _compare,
    "singularity": _singularity,
    "bounds": _bounds,
    "lemma31": _lemma31,
    "calibrate": _calibrate,
}


def run(plan: ExperimentPlan) -> int:
    """Execute ``plan`` and commit its files; returns the exit status.

    On a solver failure the partial trajectory and the failure message are
    written to ``failure.json`` and the status is nonzero.
    """
    out = _Outputs()
    cfg_dict = plan.config.to_dict()
    try:
        _RUNNERS[plan.kind](plan, out)
    except SolverFailure as exc:
        diag = {"error": str(exc)}
        if exc.trajectory is not None:
            diag["trajectory"] = _traj_summary(exc.trajectory)
        out["failure.json"] = report.json_text(diag)
        report.commit(plan.out, out, plan.kind, cfg_dict, out.seeds)
        return EXIT_SOLVER
    report.commit(plan.out, out, plan.kind, cfg_dict, out.seeds)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="condexit", description="Conditional exit-time experiments.")
    ap.add_argument("kind", help=f"one of: {', '.join(KINDS)}")
    ap.add_argument("--config", type=Path, default=None, help="TOML file with configuration keys")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--plots", action="store_true", help="also write SVG plots")
    for f in dataclasses.fields(RunConfig):
        ap.add_argument(f"--{f.name}", dest=f.name, default=None, type=_flag_type(f.name), metavar=f.name.upper())
    return ap


def _flag_type(name: str):
    default = getattr(RunConfig, name)
    return int if isinstance(default, int) and not isinstance(default, bool) else float


def parse_plan(argv) -> ExperimentPlan:
    ns = build_parser().parse_args(argv)
    overrides = {k: getattr(ns, k) for k in CONFIG_KEYS if getattr(ns, k) is not None}
    cfg = load_config(ns.config, overrides)
    return ExperimentPlan(ns.kind, cfg, ns.out, ns.plots)


def main(argv=None) -> int:
    try:
        plan = parse_plan(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CondExitError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(plan)
    except CondExitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
