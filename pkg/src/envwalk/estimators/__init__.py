"""Statistical verification layer: quenched laws, fluctuation tests, and the
mean-field condition scan."""

from envwalk.estimators.clt import CLTReport, annealed_clt_test, quenched_clt_test
from envwalk.estimators.quenched import QuenchedDistribution, quenched_walk_distribution
from envwalk.estimators.resolvent import (
    ResolventSolution,
    resolvent_solver,
    resolvent_tail_sums,
)
from envwalk.estimators.scan import MWScanConfig, MWScanReport, mw_condition_scan
from envwalk.estimators.stability import (
    TrajectoryEnsemble,
    ensemble_at_times,
    scale_stability,
    scale_stability_profile,
)

__all__ = [
    "QuenchedDistribution",
    "quenched_walk_distribution",
    "MWScanConfig",
    "MWScanReport",
    "mw_condition_scan",
    "ResolventSolution",
    "resolvent_solver",
    "resolvent_tail_sums",
    "CLTReport",
    "quenched_clt_test",
    "annealed_clt_test",
    "TrajectoryEnsemble",
    "ensemble_at_times",
    "scale_stability",
    "scale_stability_profile",
]
