"""Conditional exit-time toolkit.

Three solvers for the unnormalised conditional density of a Brownian signal
killed on leaving ``(0, 1)``, given an observation path ``b``: a grid scheme
for the filtering equation (:mod:`.spde_solver`), Monte Carlo for the heat
equation in the moving domain (:mod:`.mc_frontier`) and direct particle
simulation (:mod:`.particle_oracle`).  Closed-form references live in
:mod:`.kernel_oracle`, singularity analytics in :mod:`.diagnostics`, the
exponent constants in :mod:`.bounds`.
"""

from .errors import CondExitError
from .model import InitialDensity, ModelParams, RunConfig, bump_density, load_config
from .paths import BrownianPath, refine, sample_path

__version__ = "0.1.0"

__all__ = [
    "BrownianPath",
    "CondExitError",
    "InitialDensity",
    "ModelParams",
    "RunConfig",
    "bump_density",
    "load_config",
    "refine",
    "sample_path",
]
