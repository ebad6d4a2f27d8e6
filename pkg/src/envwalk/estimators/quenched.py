"""Exact walker law conditional on one environment history.

With the history fixed, the walk is a time-inhomogeneous Markov chain whose
position law propagates by one convolution per step. The recursion yields,
for every step k, the conditional centered mean increment (the quenched
mean-field term); its running sums feed the summability scan and the
two-walk identity checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from envwalk.geometry import Geometry
from envwalk.kernel import EnvHistory
from envwalk.walk import WalkModel, support_codes

MASS_TOL = 1e-12


@dataclass(frozen=True)
class QuenchedDistribution:
    """Position laws p_t and derived conditional means for one history."""

    probs: list[np.ndarray]  # p_t over the box [-C1*t, C1*t]^d
    g_series: np.ndarray  # (n, d); entry k is E[step_{k+1} | history] - v
    mean_positions: np.ndarray  # (n+1, d)
    v: np.ndarray
    mass_defect: float

    def __len__(self) -> int:
        return len(self.probs) - 1

    def centered_mean_sum(self, n: int, w: np.ndarray) -> float:
        """sum_{k<n} <w, conditional centered step mean>."""
        return float(self.g_series[:n] @ w)


def _box_positions(radius: int, dim: int) -> np.ndarray:
    grids = np.indices((2 * radius + 1,) * dim).reshape(dim, -1).T
    return grids - radius


def quenched_walk_distribution(history: EnvHistory | np.ndarray, model: WalkModel,
                               geom: Geometry, n: int, v: np.ndarray,
                               memory_cap: int = 10**8) -> QuenchedDistribution:
    """Propagate the exact position law through ``n`` steps of a history.

    ``v`` centers the per-step conditional means. Mass is conserved by
    construction; the report carries the worst defect seen so the caller can
    assert it stayed at rounding level.
    """
    values = history.values if isinstance(history, EnvHistory) else np.asarray(history)
    if n > values.shape[0] - 1:
        raise ValueError(f"history has {values.shape[0] - 1} steps, {n} requested")
    c1 = model.step_range
    d = geom.dim
    if (2 * c1 * n + 1) ** d > memory_cap:
        raise MemoryError("final support box exceeds the memory cap")
    v = np.asarray(v, dtype=float).reshape(d)
    steps = model.step_array
    p = np.ones((1,) * d)
    probs_seq = [p]
    g_series = np.empty((n, d))
    mean_positions = np.empty((n + 1, d))
    mean_positions[0] = 0.0
    mass_defect = 0.0
    for t in range(n):
        radius = c1 * t
        positions = _box_positions(radius, d)
        codes = support_codes(values[t], positions, model, geom)
        pi = model.base + model.delta * model.perturbation[:, codes].T  # (cells, |steps|)
        p_flat = p.reshape(-1)
        step_mean = pi @ steps.astype(float)  # E[step | at cell]
        g_series[t] = p_flat @ step_mean - v
        new_shape = tuple(2 * (radius + c1) + 1 for _ in range(d))
        new_p = np.zeros(new_shape)
        weighted = (p_flat[:, None] * pi).reshape(p.shape + (len(steps),))
        for zi, z in enumerate(model.offsets):
            sl = tuple(slice(z[k] + c1, z[k] + c1 + p.shape[k]) for k in range(d))
            new_p[sl] += weighted[..., zi]
        p = new_p
        mass_defect = max(mass_defect, abs(float(p.sum()) - 1.0))
        probs_seq.append(p)
        positions_next = _box_positions(radius + c1, d)
        mean_positions[t + 1] = p.reshape(-1) @ positions_next
    if mass_defect > MASS_TOL:
        raise ArithmeticError(f"probability mass drifted by {mass_defect}")
    return QuenchedDistribution(probs=probs_seq, g_series=g_series,
                                mean_positions=mean_positions, v=v,
                                mass_defect=mass_defect)
