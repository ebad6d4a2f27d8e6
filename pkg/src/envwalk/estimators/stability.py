"""Stability of the rescaled walk across nearby horizons.

The rescaled centered position changes slowly: the probability that it moves
by eps between horizons N and N + L decays in N/L. The profile driver
measures the exceedance fraction over a grid of N/L ratios from a single
replica ensemble snapshotted at the required times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from envwalk.estimators.clt import annealed_positions
from envwalk.geometry import Geometry
from envwalk.kernel import EnvKernel
from envwalk.walk import WalkModel


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Replica positions captured at selected times, plus the centering drift."""

    positions_at: dict[int, np.ndarray]
    v: np.ndarray
    replicas: int

    def rescaled(self, t: int) -> np.ndarray:
        if t not in self.positions_at:
            raise KeyError(f"time {t} was not snapshotted")
        return (self.positions_at[t] - t * np.asarray(self.v)) / math.sqrt(t)


def ensemble_at_times(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                      times, replicas: int, seed: int, v: np.ndarray,
                      chunk: int = 2048, threads: int = 1,
                      burn_in: int = 64) -> TrajectoryEnsemble:
    times = tuple(sorted(set(int(t) for t in times)))
    snaps = annealed_positions(kernel, model, geom, times[-1], replicas, seed,
                               ("stability",), snapshot_times=times, chunk=chunk,
                               threads=threads, burn_in=burn_in)
    return TrajectoryEnsemble(positions_at=snaps, v=np.asarray(v, dtype=float),
                              replicas=replicas)


def scale_stability(ensemble: TrajectoryEnsemble, n: int, l_gap: int, eps: float) -> float:
    """Fraction of replicas whose rescaled position moves by at least eps
    between horizons n and n + l_gap (sup-norm); zero gap gives exactly 0."""
    if l_gap < 0 or l_gap > n:
        raise ValueError("need 0 <= l_gap <= n")
    if l_gap == 0:
        return 0.0
    a = ensemble.rescaled(n)
    b = ensemble.rescaled(n + l_gap)
    return float((np.abs(b - a).max(axis=1) >= eps).mean())


@dataclass(frozen=True)
class StabilityProfile:
    ratios: tuple[int, ...]
    l_gap: int
    eps: float
    exceedances: tuple[float, ...]
    replicas: int
    strictly_decreasing: bool
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"ratios": list(self.ratios), "l_gap": self.l_gap, "eps": self.eps,
                "exceedances": list(self.exceedances), "replicas": self.replicas,
                "strictly_decreasing": self.strictly_decreasing, "flags": dict(self.flags)}


def scale_stability_profile(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                            ratios, l_gap: int, eps: float, replicas: int, seed: int,
                            v: np.ndarray, chunk: int = 2048, threads: int = 1,
                            burn_in: int = 64) -> StabilityProfile:
    """Exceedance fractions across a grid of N/L ratios from one ensemble."""
    ratios = tuple(sorted(int(r) for r in ratios))
    times = set()
    for r in ratios:
        times.add(r * l_gap)
        times.add(r * l_gap + l_gap)
    ens = ensemble_at_times(kernel, model, geom, times, replicas, seed, v,
                            chunk=chunk, threads=threads, burn_in=burn_in)
    exc = tuple(scale_stability(ens, r * l_gap, l_gap, eps) for r in ratios)
    decreasing = all(exc[i] > exc[i + 1] for i in range(len(exc) - 1))
    return StabilityProfile(ratios=ratios, l_gap=l_gap, eps=eps, exceedances=exc,
                            replicas=replicas, strictly_decreasing=bool(decreasing),
                            flags={})
