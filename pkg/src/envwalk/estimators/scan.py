"""Summability scan for the quenched mean-field sums.

For each sampled history the quenched recursion yields the running sums
A_n = sum_{k<n} <w, conditional centered step mean at k>; the scan reports
the root-mean-square a_n over histories, the weighted summands
n^{-3/2} (ln n)^rho a_n with their partial sums, and a bootstrap trend
verdict on whether a_n stays bounded along the grid. The squared values
a_n^2 are directly comparable to the two-walk off-diagonal sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from envwalk.estimators.quenched import quenched_walk_distribution
from envwalk.exact import ExactModel, density_ratio
from envwalk.geometry import Geometry
from envwalk.kernel import EnvKernel, EnvState, sample_equilibrium, step_values
from envwalk.rng import stream
from envwalk.stats import ols_slope
from envwalk.walk import WalkModel

START_MODES = ("exact-mu", "reweighted-mu-e", "approximate-mu-e")


@dataclass(frozen=True)
class MWScanConfig:
    """Grid, weight exponent, and start-measure policy for the scan."""

    n_grid: tuple[int, ...]
    rho: float = 1.5
    histories: int = 200
    start_mode: str = "exact-mu"
    burn_in: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_grid", tuple(sorted(int(n) for n in self.n_grid)))
        if not self.n_grid or self.n_grid[0] < 1:
            raise ValueError("n_grid must hold positive horizons")
        if self.rho <= 1:
            raise ValueError("the weight exponent rho must exceed 1")
        if self.start_mode not in START_MODES:
            raise ValueError(f"start_mode must be one of {START_MODES}")


@dataclass(frozen=True)
class MWScanReport:
    n_grid: tuple[int, ...]
    rho: float
    histories: int
    start_mode: str
    a_values: tuple[float, ...]  # root-mean-square quenched sums a_n
    a_ses: tuple[float, ...]
    a_squared: tuple[float, ...]
    a_squared_ses: tuple[float, ...]
    summands: tuple[float, ...]
    partial_sums: tuple[float, ...]
    trend_slope: float
    trend_ci: tuple[float, float]
    bounded: bool
    approximate_start: bool
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "n_grid": list(self.n_grid), "rho": self.rho, "histories": self.histories,
            "start_mode": self.start_mode, "a_values": list(self.a_values),
            "a_ses": list(self.a_ses), "a_squared": list(self.a_squared),
            "a_squared_ses": list(self.a_squared_ses), "summands": list(self.summands),
            "partial_sums": list(self.partial_sums), "trend_slope": self.trend_slope,
            "trend_ci": list(self.trend_ci), "bounded": self.bounded,
            "approximate_start": self.approximate_start, "flags": dict(self.flags),
        }


def mw_condition_scan(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                      cfg: MWScanConfig, v: np.ndarray, seed: int,
                      w: np.ndarray | None = None, exact: ExactModel | None = None,
                      n_boot: int = 400, memory_cap: int = 10**8) -> MWScanReport:
    """Estimate a_n over sampled histories and judge its growth trend.

    The start measure policy follows the config: with an exact model the
    initial configuration is drawn from the exact seen-measure, or from the
    equilibrium measure with density reweighting; without one, burned-in
    equilibrium samples are used and the report is flagged approximate.
    The drift ``v`` must be supplied (oracle value or high-precision
    pre-run).
    """
    d = geom.dim
    if w is None:
        w = np.zeros(d)
        w[0] = 1.0
    w = np.asarray(w, dtype=float)
    if abs(np.linalg.norm(w) - 1.0) > 1e-9:
        raise ValueError("w must be a unit vector")
    if cfg.start_mode in ("exact-mu", "reweighted-mu-e") and (exact is None or exact.mu is None):
        raise ValueError(f"start mode {cfg.start_mode} needs an exact model with a seen measure")
    n_max = cfg.n_grid[-1]
    h_count = cfg.histories
    a_sq_samples = np.empty((h_count, len(cfg.n_grid)))
    weights = np.ones(h_count)
    ratio = None
    if cfg.start_mode == "reweighted-mu-e":
        ratio = density_ratio(exact.mu, exact.mu_e).ratio
    for h in range(h_count):
        init_gen = stream(seed, "scan", h, "init")
        if cfg.start_mode == "exact-mu":
            theta0 = exact.sample_states(exact.mu, 1, init_gen)[0]
        else:
            theta0 = sample_equilibrium(kernel, geom, cfg.burn_in, init_gen).values
            if ratio is not None:
                idx = exact.state_index(theta0)[0]
                weights[h] = ratio[idx]
        env_gen = stream(seed, "scan", h, "env")
        values = np.empty((n_max + 1,) + geom.shape, dtype=np.int64)
        values[0] = theta0
        for t in range(n_max):
            values[t + 1] = step_values(values[t], kernel, geom, env_gen)
        qd = quenched_walk_distribution(values, model, geom, n_max, v, memory_cap)
        running = np.cumsum(qd.g_series @ w)
        for col, n in enumerate(cfg.n_grid):
            a_sq_samples[h, col] = running[n - 1] ** 2

    weighted = weights[:, None] * a_sq_samples
    a_sq = weighted.mean(axis=0)
    a_sq_se = weighted.std(axis=0, ddof=1) / math.sqrt(h_count)
    a_vals = np.sqrt(a_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        a_se = np.where(a_vals > 0, a_sq_se / (2 * np.maximum(a_vals, 1e-300)), 0.0)
    n_arr = np.asarray(cfg.n_grid, dtype=float)
    summands = n_arr ** (-1.5) * np.log(n_arr) ** cfg.rho * a_vals
    partial = np.cumsum(summands)

    logn = np.log(n_arr)
    slope = ols_slope(logn, a_vals)[0]
    boot_gen = stream(seed, "scan", "boot")
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = boot_gen.integers(0, h_count, size=h_count)
        means = (weights[idx, None] * a_sq_samples[idx]).mean(axis=0)
        boots[b] = ols_slope(logn, np.sqrt(np.maximum(means, 0.0)))[0]
    lo, hi = np.quantile(boots, [0.025, 0.975])
    bounded = not (lo > 0)  # growth only when the whole interval is positive

    return MWScanReport(
        n_grid=cfg.n_grid, rho=cfg.rho, histories=h_count, start_mode=cfg.start_mode,
        a_values=tuple(map(float, a_vals)), a_ses=tuple(map(float, a_se)),
        a_squared=tuple(map(float, a_sq)), a_squared_ses=tuple(map(float, a_sq_se)),
        summands=tuple(map(float, summands)), partial_sums=tuple(map(float, partial)),
        trend_slope=float(slope), trend_ci=(float(lo), float(hi)), bounded=bool(bounded),
        approximate_start=cfg.start_mode == "approximate-mu-e",
        flags={"low_histories": h_count < 30},
    )
