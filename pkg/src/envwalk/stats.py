"""Small statistics helpers shared by the experiment drivers."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total == 0:
        return 0.0, 1.0
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return float(center - half), float(center + half)


def ols_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of y on x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    slope = float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
    return slope, float(ym - slope * xm)


def bootstrap_slope_ci(x: np.ndarray, samples: np.ndarray, gen: np.random.Generator,
                       n_boot: int = 500, level: float = 0.95,
                       log_means: bool = False) -> tuple[float, float, float]:
    """Slope of mean(samples) on x with a replica-bootstrap interval.

    ``samples`` has shape (replicas, len(x)); rows are resampled jointly so
    correlation across grid points is respected. With ``log_means`` the
    regression uses log of the column means (log-log fits of positive
    quantities).
    """
    def fit(idx: np.ndarray) -> float:
        means = samples[idx].mean(axis=0)
        yy = np.log(means) if log_means else means
        return ols_slope(x, yy)[0]

    n = samples.shape[0]
    est = fit(np.arange(n))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = fit(gen.integers(0, n, size=n))
    lo, hi = np.quantile(boots, [(1 - level) / 2, 1 - (1 - level) / 2])
    return est, float(lo), float(hi)


@dataclass(frozen=True)
class ChunkPlan:
    """Fixed replica chunking; identical for every thread count."""

    total: int
    chunk: int

    def bounds(self) -> list[tuple[int, int]]:
        return [(s, min(s + self.chunk, self.total)) for s in range(0, self.total, self.chunk)]


def run_chunked(plan: ChunkPlan, fn: Callable[[int, int, int], dict[str, np.ndarray]],
                threads: int = 1) -> dict[str, np.ndarray]:
    """Evaluate fn(chunk_index, start, size) per chunk and concatenate.

    Chunk boundaries come from the plan alone, and results are concatenated
    in chunk order, so output is bit-identical for any thread count.
    """
    bounds = plan.bounds()
    if threads <= 1 or len(bounds) <= 1:
        parts = [fn(i, s, e - s) for i, (s, e) in enumerate(bounds)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda args: fn(args[0], args[1][0], args[1][1] - args[1][0]),
                                  enumerate(bounds)))
    keys = parts[0].keys()
    return {k: np.concatenate([p[k] for p in parts], axis=0) for k in keys}
