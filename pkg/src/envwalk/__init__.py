"""Simulator and verification lab for random walks in dynamically evolving
lattice environments.

The package couples three layers that check each other:

* forward simulation of a synchronously updated lattice environment and of
  walkers moving through it (`kernel`, `walk`, `pair`),
* an exact transfer-matrix oracle on small tori, including the measure-lift
  operators with their contraction bound (`exact`, `lift`),
* statistical estimators for drift, quenched/annealed fluctuations and the
  mean-field condition scan (`estimators`).

Every Monte Carlo estimate produced here is cross-checkable against either a
closed form or the exact oracle; the test suite wires those checks together.
"""

from envwalk.geometry import Geometry
from envwalk.kernel import (
    DobrushinReport,
    EnvHistory,
    EnvKernel,
    EnvState,
    dobrushin_constants,
    env_step,
    kernel_tv_sensitivity,
    sample_equilibrium,
    spatial_correlation,
)
from envwalk.walk import (
    EllipticityReport,
    Trajectory,
    WalkModel,
    check_ellipticity,
    simulate,
    step_probabilities,
    walk_step,
)

__version__ = "0.1.0"

__all__ = [
    "Geometry",
    "EnvKernel",
    "EnvState",
    "EnvHistory",
    "DobrushinReport",
    "env_step",
    "dobrushin_constants",
    "kernel_tv_sensitivity",
    "sample_equilibrium",
    "spatial_correlation",
    "WalkModel",
    "EllipticityReport",
    "Trajectory",
    "step_probabilities",
    "check_ellipticity",
    "walk_step",
    "simulate",
    "__version__",
]
