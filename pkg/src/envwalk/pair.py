"""Two independent walks in one shared environment.

The pair experiments measure how quickly the walks decorrelate: counts of
close encounters against a slowly growing threshold, survival of a given
separation, excursion outcomes between two barriers, and the off-diagonal
covariance sum that ties the two-walk picture to the quenched mean-field
recursion. Positions live in the infinite lattice; only environment reads
wrap, and each experiment warns when the horizon is large enough for wrap
effects to matter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from envwalk.exact import ExactModel
from envwalk.geometry import Geometry, GeometryError
from envwalk.kernel import EnvKernel, EnvState, equilibrium_batch, sample_equilibrium, step_values
from envwalk.rng import Label, pick, stream
from envwalk.stats import ChunkPlan, ols_slope, run_chunked, wilson_interval
from envwalk.walk import WalkModel, check_ellipticity, support_codes

DEFAULT_CHUNK = 512
DEFAULT_BURN_IN = 64


@dataclass(frozen=True)
class PairTrajectory:
    """Paths of two walks that read the same environment states."""

    x_positions: np.ndarray  # (N+1, d)
    y_positions: np.ndarray  # (N+1, d)
    env_seed: int
    walk_seeds: tuple[int, int]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x_positions.shape[0] - 1

    def distances(self) -> np.ndarray:
        """Sup-norm distance per time, in the infinite lattice."""
        return np.abs(self.x_positions - self.y_positions).max(axis=1)


def simulate_pair(kernel: EnvKernel, model: WalkModel, geom: Geometry, n_steps: int,
                  env_seed: int, walk_seeds: tuple[int, int],
                  starts: tuple | None = None, init_env: EnvState | None = None,
                  burn_in: int = DEFAULT_BURN_IN) -> PairTrajectory:
    """Evolve two walks in the same environment.

    At each step both increments are drawn independently from the windows at
    the two current positions of the same configuration, then the
    environment advances once. Each walk consumes its own stream keyed only
    by its seed, so swapping the two seeds swaps the paths bit for bit.
    """
    if model.dim != geom.dim:
        raise GeometryError("walk model and geometry have different dimensions")
    if starts is None:
        starts = (np.zeros(geom.dim, dtype=np.int64), np.zeros(geom.dim, dtype=np.int64))
    if init_env is None:
        init_env = sample_equilibrium(kernel, geom, burn_in, stream(env_seed, "env-init"))
    init_env.check_geometry(geom)
    env_gen = stream(env_seed, "env")
    gens = [stream(s, "pair-walk") for s in walk_seeds]
    pos = [np.empty((n_steps + 1, geom.dim), dtype=np.int64) for _ in range(2)]
    pos[0][0] = np.asarray(starts[0], dtype=np.int64)
    pos[1][0] = np.asarray(starts[1], dtype=np.int64)
    values = init_env.values
    steps = model.step_array
    for t in range(n_steps):
        for w in range(2):
            code = support_codes(values, pos[w][t][None, :], model, geom)[0]
            probs = model.base + model.delta * model.perturbation[:, code]
            pos[w][t + 1] = pos[w][t] + steps[pick(probs, gens[w].random())]
        values = step_values(values, kernel, geom, env_gen)
    return PairTrajectory(x_positions=pos[0], y_positions=pos[1], env_seed=env_seed,
                          walk_seeds=tuple(walk_seeds),
                          provenance={"n_steps": n_steps, "burn_in": burn_in})


def close_encounters(pair: PairTrajectory, threshold: float) -> int:
    """Number of times 0..N the walks are within ``threshold`` in sup-norm."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return int((pair.distances() <= threshold).sum())


# ---------------------------------------------------------------------------
# Batched pair engine
# ---------------------------------------------------------------------------

def _init_batch_env(kernel: EnvKernel, geom: Geometry, size: int,
                    gen: np.random.Generator, burn_in: int,
                    exact: ExactModel | None, start_weights: np.ndarray | None) -> np.ndarray:
    if start_weights is not None:
        if exact is None:
            raise ValueError("explicit start weights need the exact model for decoding")
        return exact.sample_states(start_weights, size, gen)
    return equilibrium_batch(kernel, geom, burn_in, size, gen)


def _pair_chunk_runner(kernel: EnvKernel, model: WalkModel, geom: Geometry, n_steps: int,
                       seed: int, labels: tuple[Label, ...], starts_ab: tuple,
                       per_step, burn_in: int = DEFAULT_BURN_IN,
                       exact: ExactModel | None = None,
                       start_weights: np.ndarray | None = None):
    """Return a chunk function evolving a batch of pairs and calling
    ``per_step(t, x, y)`` after positions at time t are available."""

    steps = model.step_array

    def chunk_fn(chunk_index: int, start: int, size: int) -> dict[str, np.ndarray]:
        env_gen = stream(seed, *labels, "env", chunk_index)
        gx = stream(seed, *labels, "walk-x", chunk_index)
        gy = stream(seed, *labels, "walk-y", chunk_index)
        values = _init_batch_env(kernel, geom, size, env_gen, burn_in, exact, start_weights)
        x = np.broadcast_to(np.asarray(starts_ab[0], np.int64), (size, geom.dim)).copy()
        y = np.broadcast_to(np.asarray(starts_ab[1], np.int64), (size, geom.dim)).copy()
        acc = per_step(0, x, y, None, size)
        for t in range(1, n_steps + 1):
            cx = support_codes(values, x, model, geom)
            cy = support_codes(values, y, model, geom)
            px = model.base + model.delta * model.perturbation[:, cx].T
            py = model.base + model.delta * model.perturbation[:, cy].T
            x = x + steps[pick(px, gx.random(size))]
            y = y + steps[pick(py, gy.random(size))]
            values = step_values(values, kernel, geom, env_gen)
            acc = per_step(t, x, y, acc, size)
        return acc

    return chunk_fn


def _wrap_warning(geom: Geometry, model: WalkModel, n_steps: int) -> bool:
    """True when walkers can cross half the torus within the horizon."""
    return 2 * model.step_range * n_steps >= geom.side / 2


@dataclass(frozen=True)
class EncounterReport:
    """Encounter counts per horizon and the fitted growth exponent."""

    n_grid: tuple[int, ...]
    thresholds: tuple[float, ...]
    mean_counts: tuple[float, ...]
    ses: tuple[float, ...]
    replicas: int
    a_coeff: float
    exponent: float | None
    exponent_ci: tuple[float, float] | None
    sublinear: bool | None
    gamma_floor: float
    exploration_constraint: float  # 4 * A * ln(1/gamma); excursion rate must beat it
    flags: dict = field(default_factory=dict)
    counts: np.ndarray | None = None

    def as_dict(self) -> dict:
        out = {
            "n_grid": list(self.n_grid),
            "thresholds": list(self.thresholds),
            "mean_counts": list(self.mean_counts),
            "ses": list(self.ses),
            "replicas": self.replicas,
            "a_coeff": self.a_coeff,
            "gamma_floor": self.gamma_floor,
            "exploration_constraint": self.exploration_constraint,
            "flags": dict(self.flags),
        }
        if self.exponent is not None:
            out.update(exponent=self.exponent, exponent_ci=list(self.exponent_ci),
                       sublinear=self.sublinear)
        return out


def encounter_scaling(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                      n_grid, a_coeff: float, replicas: int, seed: int,
                      chunk: int = DEFAULT_CHUNK, threads: int = 1,
                      n_boot: int = 400, keep_counts: bool = False) -> EncounterReport:
    """Mean count of encounters below A*ln(N), per horizon N, and its
    log-log growth exponent with a replica-bootstrap interval.

    Sub-linear growth (interval upper bound below 1) is the quantity under
    test. Runs with fewer than 30 replicas or a single grid point are
    flagged rather than rejected.
    """
    n_grid = tuple(int(n) for n in n_grid)
    flags = {"low_replicas": replicas < 30, "degenerate_fit": len(n_grid) < 2,
             "wrap_warning": _wrap_warning(geom, model, max(n_grid))}
    thresholds = tuple(a_coeff * math.log(n) for n in n_grid)
    all_counts = np.empty((replicas, len(n_grid)))
    for col, (n_steps, thr) in enumerate(zip(n_grid, thresholds)):
        def per_step(t, x, y, acc, size, thr=thr):
            if acc is None:
                acc = {"count": np.zeros(size)}
            dist = np.abs(x - y).max(axis=1)
            acc["count"] += dist <= thr
            return acc

        fn = _pair_chunk_runner(kernel, model, geom, n_steps, seed,
                                ("encounters", n_steps), ((0,) * geom.dim,) * 2, per_step)
        out = run_chunked(ChunkPlan(replicas, chunk), fn, threads)
        all_counts[:, col] = out["count"]

    means = all_counts.mean(axis=0)
    ses = all_counts.std(axis=0, ddof=1) / math.sqrt(replicas)
    exponent = ci = sublinear = None
    if len(n_grid) >= 2:
        logn = np.log(np.asarray(n_grid, dtype=float))
        boot_gen = stream(seed, "encounters", "boot")
        est, _ = ols_slope(logn, np.log(means))
        boots = np.empty(n_boot)
        for b in range(n_boot):
            bm = np.array([
                all_counts[boot_gen.integers(0, replicas, size=replicas), c].mean()
                for c in range(len(n_grid))
            ])
            boots[b] = ols_slope(logn, np.log(bm))[0]
        lo, hi = np.quantile(boots, [0.025, 0.975])
        exponent, ci, sublinear = est, (float(lo), float(hi)), bool(hi < 1.0)
    ell = check_ellipticity(model)
    constraint = 4.0 * a_coeff * math.log(1.0 / ell.gamma_floor) if ell.gamma_floor > 0 else math.inf
    return EncounterReport(
        n_grid=n_grid, thresholds=thresholds, mean_counts=tuple(map(float, means)),
        ses=tuple(map(float, ses)), replicas=replicas, a_coeff=a_coeff,
        exponent=exponent, exponent_ci=ci, sublinear=sublinear,
        gamma_floor=ell.gamma_floor, exploration_constraint=float(constraint),
        flags=flags, counts=all_counts if keep_counts else None,
    )


@dataclass(frozen=True)
class ExcursionReport:
    estimate: float
    ci_low: float
    ci_high: float
    replicas: int
    censored: int
    inner_barrier: float
    outer_barrier: float
    start_distance: int
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate, "ci_low": self.ci_low, "ci_high": self.ci_high,
            "replicas": self.replicas, "censored": self.censored,
            "inner_barrier": self.inner_barrier, "outer_barrier": self.outer_barrier,
            "start_distance": self.start_distance, "flags": dict(self.flags),
        }


def excursion_probability(kernel: EnvKernel, model: WalkModel, geom: Geometry, R: int,
                          eps_frac: float, replicas: int, seed: int,
                          step_cap: int | None = None, chunk: int = DEFAULT_CHUNK,
                          threads: int = 1, burn_in: int = DEFAULT_BURN_IN) -> ExcursionReport:
    """Probability that two walks started R apart separate to 2R before
    approaching within R*eps/2, with a Wilson interval.

    The start points sit on the first coordinate axis. When the inner
    barrier falls below 1 the two stopping sets overlap and the run is
    flagged; an interval entirely below 1/4 flags the radius as possibly
    too small for the barrier asymptotics rather than failing hard.
    """
    if not (0 < eps_frac <= 1):
        raise ValueError("eps_frac must lie in (0, 1]")
    lower = R * eps_frac / 2.0
    upper = 2.0 * R
    flags = {"barrier_overlap": lower < 1.0}
    if step_cap is None:
        step_cap = max(20_000, 100 * R * R)
    start_b = np.zeros(geom.dim, dtype=np.int64)
    start_b[0] = R
    steps = model.step_array

    def chunk_fn(chunk_index: int, start: int, size: int) -> dict[str, np.ndarray]:
        env_gen = stream(seed, "excursion", "env", chunk_index)
        gx = stream(seed, "excursion", "walk-x", chunk_index)
        gy = stream(seed, "excursion", "walk-y", chunk_index)
        values = equilibrium_batch(kernel, geom, burn_in, size, env_gen)
        x = np.zeros((size, geom.dim), dtype=np.int64)
        y = np.broadcast_to(start_b, (size, geom.dim)).copy()
        outcome = np.full(size, -1, dtype=np.int64)  # 1 separated, 0 met, -1 censored
        active = np.arange(size)
        for _ in range(step_cap):
            cx = support_codes(values, x, model, geom)
            cy = support_codes(values, y, model, geom)
            px = model.base + model.delta * model.perturbation[:, cx].T
            py = model.base + model.delta * model.perturbation[:, cy].T
            x = x + steps[pick(px, gx.random(active.size))]
            y = y + steps[pick(py, gy.random(active.size))]
            values = step_values(values, kernel, geom, env_gen)
            dist = np.abs(x - y).max(axis=1)
            hit_hi = dist >= upper
            hit_lo = dist <= lower
            done = hit_hi | hit_lo
            if done.any():
                outcome[active[hit_hi]] = 1
                outcome[active[hit_lo & ~hit_hi]] = 0
                keep = ~done
                active = active[keep]
                if active.size == 0:
                    break
                x, y, values = x[keep], y[keep], values[keep]
        return {"outcome": outcome}

    out = run_chunked(ChunkPlan(replicas, chunk), chunk_fn, threads)
    outcome = out["outcome"]
    censored = int((outcome == -1).sum())
    decided = replicas - censored
    separated = int((outcome == 1).sum())
    est = separated / decided if decided else 0.0
    lo, hi = wilson_interval(separated, decided)
    flags["censored_runs"] = censored > 0
    flags["maybe_below_quarter"] = hi < 0.25
    return ExcursionReport(estimate=float(est), ci_low=lo, ci_high=hi, replicas=replicas,
                           censored=censored, inner_barrier=lower, outer_barrier=upper,
                           start_distance=R, flags=flags)


@dataclass(frozen=True)
class SurvivalReport:
    n_grid: tuple[int, ...]
    estimates: tuple[float, ...]
    ci_lows: tuple[float, ...]
    ci_highs: tuple[float, ...]
    replicas: int
    separation: float
    beta_hat: float | None
    beta_ci: tuple[float, float] | None
    all_positive: bool
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "n_grid": list(self.n_grid), "estimates": list(self.estimates),
            "ci_lows": list(self.ci_lows), "ci_highs": list(self.ci_highs),
            "replicas": self.replicas, "separation": self.separation,
            "all_positive": self.all_positive, "flags": dict(self.flags),
        }
        if self.beta_hat is not None:
            out["beta_hat"] = self.beta_hat
            out["beta_ci"] = list(self.beta_ci)
        return out


def separation_survival(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                        n_grid, separation: float, starts: tuple | None,
                        replicas: int, seed: int, chunk: int = DEFAULT_CHUNK,
                        threads: int = 1, n_boot: int = 400) -> SurvivalReport:
    """Probability the walks stay farther than ``separation`` up to each
    horizon, plus a log-log decay fit.

    One run to the largest horizon serves every grid point (survival events
    are nested). The decay exponent of survival against N is reported as
    beta_hat with a replica-bootstrap interval when all estimates are
    positive.
    """
    n_grid = tuple(sorted(int(n) for n in n_grid))
    n_max = n_grid[-1]
    if starts is None:
        b = np.zeros(geom.dim, dtype=np.int64)
        b[0] = int(math.floor(separation)) + 1
        starts = (np.zeros(geom.dim, dtype=np.int64), b)
    if np.abs(np.asarray(starts[0]) - np.asarray(starts[1])).max() <= separation:
        raise ValueError("initial separation must exceed the threshold")
    grid_index = {n: i for i, n in enumerate(n_grid)}

    def per_step(t, x, y, acc, size):
        if acc is None:
            acc = {"alive": np.ones(size, dtype=bool),
                   "survived": np.zeros((size, len(n_grid)), dtype=bool)}
        if t > 0:
            acc["alive"] &= np.abs(x - y).max(axis=1) > separation
        if t in grid_index:
            acc["survived"][:, grid_index[t]] = acc["alive"]
        return acc

    fn = _pair_chunk_runner(kernel, model, geom, n_max, seed, ("survival",), starts, per_step)
    out = run_chunked(ChunkPlan(replicas, chunk), fn, threads)
    survived = out["survived"]
    counts = survived.sum(axis=0)
    estimates = counts / replicas
    cis = [wilson_interval(int(c), replicas) for c in counts]
    beta = beta_ci = None
    if len(n_grid) >= 2 and np.all(counts > 0):
        logn = np.log(np.asarray(n_grid, dtype=float))
        boot_gen = stream(seed, "survival", "boot")
        est = -ols_slope(logn, np.log(estimates))[0]
        boots = np.empty(n_boot)
        for bnum in range(n_boot):
            idx = boot_gen.integers(0, replicas, size=replicas)
            means = survived[idx].mean(axis=0)
            boots[bnum] = -ols_slope(logn, np.log(np.maximum(means, 1e-12)))[0]
        lo, hi = np.quantile(boots, [0.025, 0.975])
        beta, beta_ci = float(est), (float(lo), float(hi))
    return SurvivalReport(
        n_grid=n_grid, estimates=tuple(map(float, estimates)),
        ci_lows=tuple(c[0] for c in cis), ci_highs=tuple(c[1] for c in cis),
        replicas=replicas, separation=float(separation), beta_hat=beta, beta_ci=beta_ci,
        all_positive=bool(np.all(counts > 0)),
        flags={"wrap_warning": _wrap_warning(geom, model, n_max),
               "degenerate_fit": len(n_grid) < 2},
    )


@dataclass(frozen=True)
class OffdiagonalReport:
    """Monte Carlo estimate of the summed cross-covariance of the two walks."""

    n_grid: tuple[int, ...]
    estimates: tuple[float, ...]
    ses: tuple[float, ...]
    replicas: int
    start_mode: str

    def as_dict(self) -> dict:
        return {"n_grid": list(self.n_grid), "estimates": list(self.estimates),
                "ses": list(self.ses), "replicas": self.replicas,
                "start_mode": self.start_mode}


def offdiagonal_sum(kernel: EnvKernel, model: WalkModel, geom: Geometry, n_grid,
                    w: np.ndarray, v: np.ndarray, replicas: int, seed: int,
                    exact: ExactModel | None = None, chunk: int = DEFAULT_CHUNK,
                    threads: int = 1, burn_in: int = DEFAULT_BURN_IN) -> OffdiagonalReport:
    """Average of <w, X_n - n v> <w, Y_n - n v> over pairs sharing an
    environment; by conditional independence this equals the full double sum
    of increment cross-correlations.

    The drift v must come from the exact oracle or a high-precision pre-run.
    With an exact model the environment starts from the exact seen-measure;
    otherwise it starts from a burned-in approximation and the report says
    so.
    """
    w = np.asarray(w, dtype=float)
    if abs(np.linalg.norm(w) - 1.0) > 1e-9:
        raise ValueError("w must be a unit vector")
    v = np.asarray(v, dtype=float)
    n_grid = tuple(sorted(int(n) for n in n_grid))
    grid_index = {n: i for i, n in enumerate(n_grid)}
    start_weights = None
    start_mode = "burned-in-approximate"
    if exact is not None and exact.mu is not None:
        start_weights = exact.mu
        start_mode = "exact-seen-measure"

    def per_step(t, x, y, acc, size):
        if acc is None:
            acc = {"products": np.empty((size, len(n_grid)))}
        if t in grid_index:
            sx = (x - t * v) @ w
            sy = (y - t * v) @ w
            acc["products"][:, grid_index[t]] = sx * sy
        return acc

    fn = _pair_chunk_runner(kernel, model, geom, n_grid[-1], seed, ("offdiag",),
                            ((0,) * geom.dim,) * 2, per_step, burn_in=burn_in,
                            exact=exact, start_weights=start_weights)
    out = run_chunked(ChunkPlan(replicas, chunk), fn, threads)
    products = out["products"]
    return OffdiagonalReport(
        n_grid=n_grid,
        estimates=tuple(float(x) for x in products.mean(axis=0)),
        ses=tuple(float(x) for x in products.std(axis=0, ddof=1) / math.sqrt(replicas)),
        replicas=replicas, start_mode=start_mode,
    )


# ---------------------------------------------------------------------------
# Exact oracle for the environment-free difference chain
# ---------------------------------------------------------------------------

def difference_increment_law(model: WalkModel) -> tuple[np.ndarray, np.ndarray]:
    """Law of one X-step minus one Y-step when delta == 0, d == 1.

    Returns (offsets, probabilities); the law is the convolution of the base
    with its reflection.
    """
    if model.dim != 1:
        raise ValueError("difference-chain oracle is one-dimensional")
    if model.delta != 0:
        raise ValueError("difference-chain oracle requires delta == 0")
    r = model.step_range
    base = model.base
    offsets = np.arange(-2 * r, 2 * r + 1)
    probs = np.zeros(offsets.size)
    for i, zx in enumerate(range(-r, r + 1)):
        for j, zy in enumerate(range(-r, r + 1)):
            probs[zx - zy + 2 * r] += base[i] * base[j]
    return offsets, probs


def difference_absorption_oracle(model: WalkModel, lower: float, upper: float,
                                 start: int) -> float:
    """Exact probability the difference chain exits at or above ``upper``
    before dropping to or below ``lower``, starting from ``start``.

    Requires lower >= 2 * step_range so the distance cannot jump across zero
    without first being absorbed.
    """
    offsets, probs = difference_increment_law(model)
    if lower < 2 * model.step_range:
        raise ValueError("lower barrier too close to zero for the signed-distance solve")
    lo = int(math.floor(lower))
    hi = int(math.ceil(upper))
    interior = np.arange(lo + 1, hi)  # distances strictly between the barriers
    index = {d: i for i, d in enumerate(interior)}
    n = interior.size
    Q = np.zeros((n, n))
    r_vec = np.zeros(n)
    for i, dcur in enumerate(interior):
        for off, p in zip(offsets, probs):
            nxt = dcur + off
            if nxt >= upper:
                r_vec[i] += p
            elif nxt <= lower:
                continue
            else:
                Q[i, index[nxt]] += p
    u = np.linalg.solve(np.eye(n) - Q, r_vec)
    if not (lower < start < upper):
        raise ValueError("start must lie strictly between the barriers")
    return float(u[index[start]])


def simulate_difference_chain(model: WalkModel, n_steps: int, replicas: int,
                              gen: np.random.Generator) -> np.ndarray:
    """Brute-force difference trajectories (delta == 0, d == 1), shape
    (replicas, n_steps + 1)."""
    offsets, probs = difference_increment_law(model)
    u = gen.random((replicas, n_steps))
    jumps = offsets[pick(np.broadcast_to(probs, (replicas, n_steps, probs.size)), u)]
    out = np.zeros((replicas, n_steps + 1), dtype=np.int64)
    out[:, 1:] = np.cumsum(jumps, axis=1)
    return out
