"""Finite-range walk whose step law reads the local environment window.

The step distribution over the sup-norm ball of radius C1 is a fixed base
vector plus a small environment-dependent perturbation,

    pi_z(theta) = a_z + delta * b_z(theta restricted to the support),

with sum_z b_z identically zero so the law stays normalized for every
window. The perturbation support is a subset of the step set; the shipped
desk models read only the site under the walker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from envwalk.geometry import Geometry, GeometryError, Offset, sup_ball, sup_norm
from envwalk.kernel import ATOL, EnvKernel, EnvState, sample_equilibrium, step_values
from envwalk.rng import Label, pick, stream


class WalkModelError(ValueError):
    """Raised when walk-model data violate its invariants."""


@dataclass(frozen=True)
class WalkModel:
    """Step law of the walk.

    Parameters
    ----------
    dim : int
        Lattice dimension.
    step_range : int
        C1; the step set is the sup-norm ball of this radius, C-order.
    base : array-like, shape (|steps|,)
        Environment-independent part a_z, a probability vector.
    delta : float
        Perturbation amplitude, >= 0.
    perturbation_support : tuple of offsets
        Window sites the perturbation reads; must lie inside the step set.
    perturbation : array-like, shape (|steps|, m**|support|)
        b_z per window code (mixed radix over the support, first offset most
        significant); every column sums to 0.
    n_symbols : int
        Alphabet size m of the environment the walk runs in.
    """

    dim: int
    step_range: int
    base: np.ndarray
    delta: float
    perturbation_support: tuple[Offset, ...]
    perturbation: np.ndarray
    n_symbols: int

    def __post_init__(self) -> None:
        if self.dim < 1 or self.step_range < 0:
            raise WalkModelError("dim must be >= 1 and step_range >= 0")
        steps = sup_ball(self.step_range, self.dim)
        base = np.asarray(self.base, dtype=float)
        if base.shape != (len(steps),):
            raise WalkModelError(f"base must have one entry per step offset ({len(steps)})")
        if np.any(base < 0) or abs(base.sum() - 1.0) > ATOL:
            raise WalkModelError("base must be a probability vector")
        object.__setattr__(self, "base", base)
        if self.delta < 0:
            raise WalkModelError("delta must be nonnegative")
        support = tuple(tuple(int(c) for c in off) for off in self.perturbation_support)
        if len(set(support)) != len(support):
            raise WalkModelError("perturbation support repeats offsets")
        for off in support:
            if len(off) != self.dim or sup_norm(off) > self.step_range:
                raise WalkModelError("perturbation support must lie inside the step set")
        object.__setattr__(self, "perturbation_support", support)
        if self.n_symbols < 2:
            raise WalkModelError("n_symbols must be at least 2")
        n_windows = self.n_symbols ** len(support)
        if n_windows > 10**6:
            raise WalkModelError("window space too large for exhaustive validation")
        pert = np.asarray(self.perturbation, dtype=float)
        if pert.shape != (len(steps), n_windows):
            raise WalkModelError(
                f"perturbation must have shape ({len(steps)}, {n_windows})"
            )
        if np.any(np.abs(pert.sum(axis=0)) > ATOL):
            raise WalkModelError("perturbation columns must sum to 0 for every window")
        object.__setattr__(self, "perturbation", pert)
        probs = base[:, None] + self.delta * pert
        if probs.min() < -ATOL or probs.max() > 1.0 + ATOL:
            raise WalkModelError("some step probability leaves [0, 1]")

    @property
    def offsets(self) -> tuple[Offset, ...]:
        return tuple(sup_ball(self.step_range, self.dim))

    @property
    def lambda_size(self) -> int:
        return (2 * self.step_range + 1) ** self.dim

    @property
    def D(self) -> float:
        """delta * sum_z max over windows of |b_z|."""
        return float(self.delta * np.abs(self.perturbation).max(axis=1).sum())

    @property
    def step_array(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=np.int64)

    def probs_for_codes(self, codes: np.ndarray) -> np.ndarray:
        """Step distributions for window codes; result shape (..., |steps|)."""
        return self.base + self.delta * self.perturbation[:, codes].T if codes.ndim == 1 \
            else self.base + self.delta * np.moveaxis(self.perturbation[:, codes], 0, -1)

    def window_code(self, window_values: Iterable[int]) -> int:
        code = 0
        for v in window_values:
            code = code * self.n_symbols + int(v)
        return code


def step_probabilities(window: Iterable[int], model: WalkModel) -> np.ndarray:
    """Step distribution read off a full window over the step set.

    ``window`` holds symbol indices for every offset of the step set in
    C-order; only the perturbation-support entries enter the law.
    """
    window = np.asarray(list(window), dtype=np.int64)
    offsets = model.offsets
    if window.shape != (len(offsets),):
        raise WalkModelError(f"window must have exactly {len(offsets)} entries")
    sub = [window[offsets.index(off)] for off in model.perturbation_support]
    probs = model.base + model.delta * model.perturbation[:, model.window_code(sub)]
    assert abs(probs.sum() - 1.0) <= ATOL
    return probs


@dataclass(frozen=True)
class EllipticityReport:
    """Uniform lower bound data: pi_z >= c * gamma_z, plus the span test."""

    c: float
    gamma: np.ndarray
    min_probs: np.ndarray
    gamma_floor: float
    span_ok: bool
    offsets: tuple[Offset, ...]


def check_ellipticity(model: WalkModel) -> EllipticityReport:
    """Exhaustive ellipticity check over all perturbation windows.

    gamma is the normalized vector of per-step minima and c their sum; the
    span flag asks that the steps with positive gamma affinely span the
    lattice, equivalently that the vectors (1, z) span dimension d+1. A
    failed span is reported, not raised.
    """
    n_windows = model.n_symbols ** len(model.perturbation_support)
    codes = np.arange(n_windows)
    probs = model.base[None, :] + model.delta * model.perturbation[:, codes].T
    min_probs = probs.min(axis=0)
    c = float(min_probs.sum())
    gamma = min_probs / c if c > 0 else np.zeros_like(min_probs)
    support_pts = [off for off, g in zip(model.offsets, gamma) if g > 0]
    if support_pts:
        lifted = np.array([(1,) + off for off in support_pts], dtype=float)
        span_ok = np.linalg.matrix_rank(lifted) == model.dim + 1
    else:
        span_ok = False
    positive = gamma[gamma > 0]
    gamma_floor = float(c * positive.min()) if positive.size else 0.0
    return EllipticityReport(c=c, gamma=gamma, min_probs=min_probs,
                             gamma_floor=gamma_floor, span_ok=bool(span_ok),
                             offsets=model.offsets)


# ---------------------------------------------------------------------------
# Window reads and stepping
# ---------------------------------------------------------------------------

def support_codes(values: np.ndarray, positions: np.ndarray, model: WalkModel,
                  geom: Geometry) -> np.ndarray:
    """Perturbation-window codes at walker positions.

    ``positions`` has shape (..., d) in the infinite lattice; ``values`` is
    either one shared lattice (outcome shape = positions batch shape) or a
    per-replica batch whose leading axes match the positions batch.
    """
    batch_shape = positions.shape[:-1]
    shared = values.ndim == geom.dim
    codes = np.zeros(batch_shape, dtype=np.int64)
    for off in model.perturbation_support:
        site = (positions + np.asarray(off)) % geom.side
        flat = np.zeros(batch_shape, dtype=np.int64)
        for k in range(geom.dim):
            flat = flat * geom.side + site[..., k]
        if shared:
            vals = values.reshape(-1)[flat]
        else:
            vals = values.reshape(batch_shape + (-1,))[
                tuple(np.indices(batch_shape)) + (flat,)
            ]
        codes = codes * model.n_symbols + vals
    return codes


def _check_walk_geometry(model: WalkModel, geom: Geometry) -> None:
    if model.dim != geom.dim:
        raise GeometryError("walk model and geometry have different dimensions")
    if not geom.fits_radius(model.step_range):
        raise GeometryError(
            f"walk range {model.step_range} does not fit a torus of side {geom.side}"
        )


def walk_step(x: np.ndarray, env: EnvState, model: WalkModel, geom: Geometry,
              gen: np.random.Generator) -> np.ndarray:
    """One increment drawn from the window at x; position stays unwrapped."""
    _check_walk_geometry(model, geom)
    x = np.asarray(x, dtype=np.int64)
    code = support_codes(env.values, x[None, :], model, geom)[0]
    probs = model.base + model.delta * model.perturbation[:, code]
    z = model.step_array[pick(probs, gen.random())]
    return x + z


@dataclass(frozen=True)
class Trajectory:
    """Walker path with optional environment recordings and provenance."""

    positions: np.ndarray  # (N+1, d)
    increments: np.ndarray  # (N, d)
    env_values: np.ndarray | None = None  # (N+1, *lattice) when recorded
    windows: np.ndarray | None = None  # (N+1, (2r+1)**d) window codes seen
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.increments.shape[0]


@dataclass(frozen=True)
class RecordOptions:
    env: bool = False
    window_radius: int | None = None


def simulate(kernel: EnvKernel, model: WalkModel, geom: Geometry, n_steps: int,
             seed: int, record: RecordOptions = RecordOptions(),
             env_seed: int | None = None, walk_seed: int | None = None,
             init_env: EnvState | None = None, burn_in: int = 64,
             start: Offset | None = None) -> Trajectory:
    """Simulate the joint walk/environment chain for ``n_steps``.

    Each step first draws the increment from the window at the current
    position, then advances the environment; both read the time-t
    configuration. Environment randomness and walk randomness come from
    independent named streams, so one environment history can be replayed
    under many walk seeds: pass the same ``env_seed`` with different
    ``walk_seed`` values.
    """
    _check_walk_geometry(model, geom)
    if env_seed is None:
        env_seed = seed
    if walk_seed is None:
        walk_seed = seed
    radius = record.window_radius
    if radius is not None and not geom.fits_radius(radius):
        raise GeometryError(f"recorded window radius {radius} does not fit side {geom.side}")
    if init_env is None:
        init_env = sample_equilibrium(kernel, geom, burn_in, stream(env_seed, "env-init"))
    init_env.check_geometry(geom)

    x = np.zeros(geom.dim, dtype=np.int64) if start is None else np.asarray(start, np.int64)
    positions = np.empty((n_steps + 1, geom.dim), dtype=np.int64)
    increments = np.empty((n_steps, geom.dim), dtype=np.int64)
    positions[0] = x
    env_gen = stream(env_seed, "env")
    walk_gen = stream(walk_seed, "walk")
    env_rec = None
    if record.env:
        env_rec = np.empty((n_steps + 1,) + geom.shape, dtype=np.int64)
        env_rec[0] = init_env.values
    win_rec = None
    win_offsets = None
    if radius is not None:
        win_offsets = np.asarray(sup_ball(radius, geom.dim), dtype=np.int64)
        win_rec = np.empty((n_steps + 1, len(win_offsets)), dtype=np.int64)

    values = init_env.values
    steps = model.step_array
    for t in range(n_steps + 1):
        if win_rec is not None:
            site = (positions[t][None, :] + win_offsets) % geom.side
            flat = np.zeros(len(win_offsets), dtype=np.int64)
            for k in range(geom.dim):
                flat = flat * geom.side + site[:, k]
            win_rec[t] = values.reshape(-1)[flat]
        if t == n_steps:
            break
        code = support_codes(values, positions[t][None, :], model, geom)[0]
        probs = model.base + model.delta * model.perturbation[:, code]
        z = steps[pick(probs, walk_gen.random())]
        increments[t] = z
        positions[t + 1] = positions[t] + z
        values = step_values(values, kernel, geom, env_gen)
        if env_rec is not None:
            env_rec[t + 1] = values

    return Trajectory(
        positions=positions, increments=increments, env_values=env_rec, windows=win_rec,
        provenance={"seed": seed, "env_seed": env_seed, "walk_seed": walk_seed,
                    "n_steps": n_steps, "burn_in": burn_in},
    )


def iid_increments(model: WalkModel, n_steps: int, gen: np.random.Generator,
                   batch: int | None = None) -> np.ndarray:
    """Environment-free increment draws, valid exactly when delta == 0."""
    if model.delta != 0:
        raise WalkModelError("i.i.d. increment sampling requires delta == 0")
    shape = (n_steps,) if batch is None else (batch, n_steps)
    idx = pick(np.broadcast_to(model.base, shape + model.base.shape), gen.random(shape))
    return model.step_array[idx]
