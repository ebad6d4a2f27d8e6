"""Weakly coupled lattice environment: synchronous mixture-kernel dynamics.

Each site carries a symbol from a finite alphabet. In one time step every
site q is resampled independently, given the current configuration, from

    (1 - sum_r eps_r) * base  +  sum_{r in S} eps_r * rows[theta^{q+r}]

where S is a finite influence set containing 0. The family has exact
total-variation sensitivity constants: changing the value seen at relative
offset 0 moves the site law by at most 2*eps_0 and at offset r != 0 by at
most 2*eps_r, which is what the uniqueness/mixing checks consume (d_0 =
eps_0, d_r = 2*eps_r, eta_0 = sum d_r).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable

import numpy as np

from envwalk.geometry import Geometry, GeometryError, Offset, roll_axes, sup_norm
from envwalk.rng import Label, pick, stream

if TYPE_CHECKING:  # pragma: no cover
    from envwalk.walk import WalkModel

ATOL = 1e-12


class KernelError(ValueError):
    """Raised when kernel data violate its invariants."""


def _as_prob_vector(v: Iterable[float], name: str, strictly_positive: bool = False) -> np.ndarray:
    arr = np.asarray(list(v), dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise KernelError(f"{name} must be a probability vector over at least 2 symbols")
    if np.any(arr < 0):
        raise KernelError(f"{name} has negative entries")
    if strictly_positive and np.any(arr <= 0):
        raise KernelError(f"{name} must be strictly positive")
    if abs(arr.sum() - 1.0) > ATOL:
        raise KernelError(f"{name} does not sum to 1 (got {arr.sum()!r})")
    return arr


@dataclass(frozen=True)
class EnvKernel:
    """Site update law of the coupled environment.

    Parameters
    ----------
    alphabet : tuple
        Symbol labels; index order is the canonical encoding everywhere.
    base : array-like, shape (m,)
        Strictly positive resampling distribution (full support keeps the
        stationary measure positive on small tori, so density-ratio checks
        are well posed).
    offsets : tuple of offsets
        Influence set S, must contain the zero offset.
    weights : array-like, shape (len(offsets),)
        Mixture weights eps_r >= 0 with sum <= 1.
    rows : array-like, shape (m, m)
        Copy rows: rows[i] is the site law used when the influencing site
        holds symbol i.
    decay_exponent : float
        Tail exponent used by the combined smallness condition A9(c); the
        influence set itself is finite, so tail sums vanish beyond its
        radius.
    """

    alphabet: tuple
    base: np.ndarray
    offsets: tuple[Offset, ...]
    weights: np.ndarray
    rows: np.ndarray
    decay_exponent: float = float("inf")

    def __post_init__(self) -> None:
        object.__setattr__(self, "base", _as_prob_vector(self.base, "base", strictly_positive=True))
        m = len(self.alphabet)
        if self.base.size != m:
            raise KernelError("base length does not match alphabet size")
        offsets = tuple(tuple(int(c) for c in off) for off in self.offsets)
        object.__setattr__(self, "offsets", offsets)
        if len(set(offsets)) != len(offsets):
            raise KernelError("influence offsets repeat")
        dims = {len(off) for off in offsets}
        if len(dims) != 1:
            raise KernelError("influence offsets mix dimensions")
        if (0,) * offsets[0].__len__() not in offsets:
            raise KernelError("influence set must contain the zero offset")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(offsets),):
            raise KernelError("weights length does not match influence set")
        if np.any(w < 0):
            raise KernelError("weights must be nonnegative")
        if w.sum() > 1.0 + ATOL:
            raise KernelError("weights sum exceeds 1; mixture is not a probability")
        object.__setattr__(self, "weights", w)
        rows = np.asarray(self.rows, dtype=float)
        if rows.shape != (m, m):
            raise KernelError("rows must be an (m, m) array")
        for i in range(m):
            _as_prob_vector(rows[i], f"rows[{i}]")
        object.__setattr__(self, "rows", rows)
        if not (self.decay_exponent > 0):
            raise KernelError("decay_exponent must be positive")

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet)

    @property
    def dim(self) -> int:
        return len(self.offsets[0])

    @property
    def radius(self) -> int:
        return max(sup_norm(off) for off in self.offsets)

    @property
    def base_weight(self) -> float:
        return float(1.0 - self.weights.sum())

    def d_constant(self, offset: Offset) -> float:
        """Sensitivity constant d_q: eps_0 at the origin, 2*eps_q elsewhere."""
        off = tuple(int(c) for c in offset)
        if off not in self.offsets:
            return 0.0
        eps = float(self.weights[self.offsets.index(off)])
        return eps if all(c == 0 for c in off) else 2.0 * eps

    def d_map(self) -> dict[Offset, float]:
        return {off: self.d_constant(off) for off in self.offsets}

    @property
    def eta0(self) -> float:
        return float(sum(self.d_map().values()))

    def site_distributions(self, window_codes: np.ndarray) -> np.ndarray:
        """Site laws for windows of influencing symbols.

        ``window_codes`` has shape (..., len(offsets)) holding symbol indices
        aligned with ``self.offsets``; the result has shape (..., m).
        """
        probs = np.full(window_codes.shape[:-1] + (self.n_symbols,), 0.0)
        probs += self.base_weight * self.base
        for k in range(len(self.offsets)):
            probs += self.weights[k] * self.rows[window_codes[..., k]]
        return probs


@dataclass(frozen=True)
class EnvState:
    """One torus configuration; ``values`` holds symbol indices, C-order."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.int64))

    def check_geometry(self, geom: Geometry) -> None:
        if self.values.shape != geom.shape:
            raise GeometryError(
                f"state shape {self.values.shape} does not match geometry {geom.shape}"
            )


@dataclass(frozen=True)
class EnvHistory:
    """Time-indexed environment states plus the provenance to replay them."""

    values: np.ndarray  # (T+1, side, ..., side)
    master_seed: int | None = None
    labels: tuple[Label, ...] = ()

    def __len__(self) -> int:
        return self.values.shape[0]

    def state(self, t: int) -> EnvState:
        return EnvState(self.values[t])


def _check_step_inputs(kernel: EnvKernel, geom: Geometry) -> None:
    if kernel.dim != geom.dim:
        raise GeometryError("kernel offsets and geometry have different dimensions")
    if not geom.fits_radius(kernel.radius):
        raise GeometryError(
            f"influence radius {kernel.radius} is ambiguous on a torus of side {geom.side}"
        )


def step_values(values: np.ndarray, kernel: EnvKernel, geom: Geometry,
                gen: np.random.Generator) -> np.ndarray:
    """Advance lattice values one step; leading axes are batch axes.

    All sites update synchronously from the time-t configuration; one uniform
    per site is drawn in C-order, so the result is independent of how the
    batch is laid out.
    """
    windows = np.stack(
        [roll_axes(values, off, geom.dim) for off in kernel.offsets], axis=-1
    )
    probs = kernel.site_distributions(windows)
    u = gen.random(values.shape)
    return pick(probs, u)


def env_step(state: EnvState, kernel: EnvKernel, geom: Geometry,
             gen: np.random.Generator) -> EnvState:
    """One synchronous update of every site."""
    state.check_geometry(geom)
    _check_step_inputs(kernel, geom)
    return EnvState(step_values(state.values, kernel, geom, gen))


def iid_base_values(kernel: EnvKernel, geom: Geometry, gen: np.random.Generator,
                    batch: tuple[int, ...] = ()) -> np.ndarray:
    """Configurations drawn i.i.d. from the base distribution."""
    u = gen.random(batch + geom.shape)
    cdf = np.cumsum(kernel.base)
    return np.minimum(np.sum(u[..., None] >= cdf, axis=-1), kernel.n_symbols - 1)


def sample_equilibrium(kernel: EnvKernel, geom: Geometry, burn_in: int,
                       gen: np.random.Generator) -> EnvState:
    """Approximate stationary sample: burn in from an i.i.d.-base start.

    The bias on local observables decays like eta0**burn_in, so a few dozen
    steps suffice for any kernel the condition checker accepts.
    """
    if burn_in < 1:
        raise ValueError("burn_in must be at least 1")
    _check_step_inputs(kernel, geom)
    values = iid_base_values(kernel, geom, gen)
    for _ in range(burn_in):
        values = step_values(values, kernel, geom, gen)
    return EnvState(values)


def equilibrium_batch(kernel: EnvKernel, geom: Geometry, burn_in: int, n: int,
                      gen: np.random.Generator) -> np.ndarray:
    """``n`` independent burned-in configurations, shape (n, *lattice)."""
    if burn_in < 1:
        raise ValueError("burn_in must be at least 1")
    _check_step_inputs(kernel, geom)
    values = iid_base_values(kernel, geom, gen, batch=(n,))
    for _ in range(burn_in):
        values = step_values(values, kernel, geom, gen)
    return values


def evolve_history(kernel: EnvKernel, geom: Geometry, steps: int, master_seed: int,
                   labels: tuple[Label, ...], init: EnvState | None = None,
                   burn_in: int = 64) -> EnvHistory:
    """Record a full environment history from a named stream.

    Re-running with the same (master_seed, labels, init) reproduces the
    history bit for bit. When no initial state is given, one is drawn by
    burning in from the i.i.d.-base start on a separate derived stream.
    """
    _check_step_inputs(kernel, geom)
    if init is None:
        init = sample_equilibrium(kernel, geom, burn_in, stream(master_seed, *labels, "init"))
    init.check_geometry(geom)
    gen = stream(master_seed, *labels, "env")
    out = np.empty((steps + 1,) + geom.shape, dtype=np.int64)
    out[0] = init.values
    for t in range(steps):
        out[t + 1] = step_values(out[t], kernel, geom, gen)
    return EnvHistory(out, master_seed=master_seed, labels=tuple(labels))


# ---------------------------------------------------------------------------
# Uniqueness / mixing condition checker
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DobrushinReport:
    """Sensitivity constants and the condition hierarchy built from them.

    ``eta1`` always uses the general amplification 1 + (1 + 2*|L|)*D over the
    walk's step set L. When the walk perturbation depends only on the center
    site the sharper constant 3 applies and is reported alongside as
    ``eta1_center``.
    """

    d_map: dict[Offset, float]
    eta0: float
    decay_exponent: float
    tail_sums: dict[int, float]
    a9a: bool
    D: float | None = None
    lambda_size: int | None = None
    amplification: float | None = None
    eta1: float | None = None
    amplification_center: float | None = None
    eta1_center: float | None = None
    a9b: bool | None = None
    a9c: bool | None = None
    a9c_threshold: float | None = None

    def as_dict(self) -> dict:
        out = {
            "d_map": {",".join(map(str, k)): v for k, v in self.d_map.items()},
            "eta0": self.eta0,
            "decay_exponent": self.decay_exponent,
            "tail_sums": {str(k): v for k, v in self.tail_sums.items()},
            "a9a": self.a9a,
        }
        for name in ("D", "lambda_size", "amplification", "eta1", "amplification_center",
                     "eta1_center", "a9b", "a9c", "a9c_threshold"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        return out


def dobrushin_constants(kernel: EnvKernel, walk: "WalkModel | None" = None) -> DobrushinReport:
    """Evaluate the condition hierarchy; violations set flags, never raise."""
    d_map = kernel.d_map()
    eta0 = kernel.eta0
    max_r = kernel.radius
    tail_sums = {
        L: float(sum(v for off, v in d_map.items() if sup_norm(off) >= L))
        for L in range(0, max_r + 3)
    }
    a9a = eta0 < 1.0
    if walk is None:
        return DobrushinReport(d_map=d_map, eta0=eta0, decay_exponent=kernel.decay_exponent,
                               tail_sums=tail_sums, a9a=a9a)

    D = walk.D
    lam = walk.lambda_size
    amplification = 1.0 + (1.0 + 2.0 * lam) * D
    eta1 = amplification * eta0
    center_only = set(walk.perturbation_support) <= {(0,) * walk.dim}
    amplification_center = (1.0 + 3.0 * D) if center_only else None
    eta1_center = amplification_center * eta0 if center_only else None
    a9b = eta1 < 1.0
    d = kernel.dim
    xi = kernel.decay_exponent
    if np.isinf(xi):
        threshold = 1.0 - D if D < 1.0 else 0.0  # limit of (1-D)^(xi(1+d)/(xi-d))
    else:
        threshold = (1.0 - D) ** (xi * (1.0 + d) / (xi - d)) if (D < 1.0 and xi > d) else 0.0
    a9c = bool(a9b and D < 1.0 and eta0 < threshold)
    return DobrushinReport(
        d_map=d_map, eta0=eta0, decay_exponent=kernel.decay_exponent, tail_sums=tail_sums,
        a9a=a9a, D=D, lambda_size=lam, amplification=amplification, eta1=eta1,
        amplification_center=amplification_center, eta1_center=eta1_center,
        a9b=a9b, a9c=a9c, a9c_threshold=float(threshold),
    )


def kernel_tv_sensitivity(kernel: EnvKernel, q: Offset, exhaustive_cap: int = 4096) -> float:
    """Worst-case total-variation move of a site law when offset q changes.

    Maximizes sum_y |P(w) - P(w')| over window pairs w, w' that agree except
    at the influence offset q. Enumeration is exhaustive whenever the window
    space is small; beyond ``exhaustive_cap`` windows the maximum is taken
    over the q-coordinate alone, which is exact because the mixture is
    affine in each coordinate's row.
    """
    q = tuple(int(c) for c in q)
    if q not in kernel.offsets:
        return 0.0
    k = kernel.offsets.index(q)
    m = kernel.n_symbols
    n_off = len(kernel.offsets)
    best = 0.0
    if m**n_off <= exhaustive_cap:
        codes = np.stack(np.meshgrid(*([np.arange(m)] * n_off), indexing="ij"),
                         axis=-1).reshape(-1, n_off)
        probs = kernel.site_distributions(codes)
        for i in range(m):
            sel_i = codes[:, k] == i
            rest_i = np.delete(codes[sel_i], k, axis=1)
            order_i = np.lexsort(rest_i.T[::-1])
            for j in range(i + 1, m):
                sel_j = codes[:, k] == j
                rest_j = np.delete(codes[sel_j], k, axis=1)
                order_j = np.lexsort(rest_j.T[::-1])
                diff = np.abs(probs[sel_i][order_i] - probs[sel_j][order_j]).sum(axis=1)
                best = max(best, float(diff.max()))
        return best
    eps = float(kernel.weights[k])
    for i in range(m):
        for j in range(i + 1, m):
            best = max(best, eps * float(np.abs(kernel.rows[i] - kernel.rows[j]).sum()))
    return best


# ---------------------------------------------------------------------------
# Spatial correlation probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalObservable:
    """Function of finitely many sites: offsets plus a value table.

    ``table`` is indexed by the mixed-radix code of the symbols at
    ``offsets`` (first offset most significant).
    """

    offsets: tuple[Offset, ...]
    table: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "offsets", tuple(tuple(int(c) for c in o) for o in self.offsets))
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))

    @classmethod
    def single_site(cls, values: Iterable[float], dim: int) -> "LocalObservable":
        return cls(offsets=((0,) * dim,), table=np.asarray(list(values), dtype=float))

    def shifted(self, shift: Offset) -> tuple[Offset, ...]:
        return tuple(tuple(c + s for c, s in zip(off, shift)) for off in self.offsets)

    def evaluate_field(self, values: np.ndarray, n_symbols: int, dim: int) -> np.ndarray:
        """Evaluate at every site by translation; lattice axes trail."""
        code = np.zeros(values.shape, dtype=np.int64)
        for off in self.offsets:
            code = code * n_symbols + roll_axes(values, off, dim)
        return self.table[code]


@dataclass(frozen=True)
class CorrelationEstimate:
    separation: tuple[int, ...]
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    n_samples: int


def spatial_correlation(kernel: EnvKernel, geom: Geometry, obs_a: LocalObservable,
                        obs_b: LocalObservable, separation: Offset, samples: int,
                        gen: np.random.Generator, burn_in: int = 48,
                        n_boot: int = 400) -> CorrelationEstimate:
    """Monte Carlo covariance of two local observables at a given separation.

    Draws ``samples`` independent burned-in configurations, averages the
    product field over all torus translates, and bootstraps the replicas for
    the confidence interval. Supports that overlap through wrap-around are
    rejected, except for the plain variance case (same observable, zero
    separation).
    """
    separation = tuple(int(c) for c in separation)
    same = obs_a.offsets == obs_b.offsets and np.array_equal(obs_a.table, obs_b.table)
    if not (same and all(c == 0 for c in separation)):
        shifted = {geom.wrap(off) for off in obs_b.shifted(separation)}
        if shifted & {geom.wrap(off) for off in obs_a.offsets}:
            raise GeometryError("observable supports overlap through wrap-around")
    values = equilibrium_batch(kernel, geom, burn_in, samples, gen)
    a_field = obs_a.evaluate_field(values, kernel.n_symbols, geom.dim)
    b_field = roll_axes(obs_b.evaluate_field(values, kernel.n_symbols, geom.dim),
                        separation, geom.dim)
    lat_axes = tuple(range(1, 1 + geom.dim))
    ab = (a_field * b_field).mean(axis=lat_axes)
    a_mean = a_field.mean(axis=lat_axes)
    b_mean = b_field.mean(axis=lat_axes)

    def cov_of(idx: np.ndarray) -> float:
        return float(ab[idx].mean() - a_mean[idx].mean() * b_mean[idx].mean())

    full = np.arange(samples)
    est = cov_of(full)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = cov_of(gen.integers(0, samples, size=samples))
    lo, hi = np.quantile(boots, [0.025, 0.975])
    return CorrelationEstimate(separation=separation, estimate=est, se=float(boots.std(ddof=1)),
                               ci_low=float(lo), ci_high=float(hi), n_samples=samples)
