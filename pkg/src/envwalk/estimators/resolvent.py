"""Resolvent route to the martingale approximation on a finite chain.

For a row-stochastic matrix M and a function g, the regularized equation
(1 + eps) h = M h + g has the explicit solution h = ((1+eps) Id - M)^{-1} g,
which is also the weighted series of partial power sums
eps * sum_s V_s g / (1+eps)^{s+1} with V_s = sum_{t<s} M^t. Both routes are
computed and compared; the scaled-norm sums along eps_k = eps / 2^k are the
summability certificate the martingale decomposition rests on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_stochastic(matrix: np.ndarray) -> None:
    if np.max(np.abs(matrix.sum(axis=1) - 1.0)) > 1e-10 or matrix.min() < -1e-15:
        raise ValueError("matrix must be row-stochastic")


@dataclass(frozen=True)
class ResolventSolution:
    eps: float
    h_direct: np.ndarray
    h_series: np.ndarray
    identity_residual: float
    agreement: float
    series_converged: bool
    series_terms: int
    tail_bound: float

    def as_dict(self) -> dict:
        return {"eps": self.eps, "identity_residual": self.identity_residual,
                "agreement": self.agreement, "series_converged": self.series_converged,
                "series_terms": self.series_terms, "tail_bound": self.tail_bound}


def resolvent_solver(markov_matrix: np.ndarray, g: np.ndarray, eps: float,
                     series_cap: int = 200_000, series_tol: float = 1e-12) -> ResolventSolution:
    """Solve the regularized equation directly and through the series.

    The series is truncated once the analytic tail bound (using
    |V_s g| <= s |g| in sup-norm) drops below ``series_tol`` relative to
    |g|; if the cap is hit first the solution is returned with
    ``series_converged`` false and the remaining bound reported.
    """
    matrix = np.asarray(markov_matrix, dtype=float)
    _check_stochastic(matrix)
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = np.asarray(g, dtype=float)
    n = matrix.shape[0]
    h_direct = np.linalg.solve((1.0 + eps) * np.eye(n) - matrix, g)
    identity_residual = float(np.abs((1.0 + eps) * h_direct - matrix @ h_direct - g).max())

    g_norm = float(np.abs(g).max())
    x = 1.0 / (1.0 + eps)
    mg = g.copy()          # M^{s-1} g
    vg = np.zeros_like(g)  # V_s g
    h_series = np.zeros_like(g)
    converged = False
    tail = np.inf
    s = 0
    for s in range(1, series_cap + 1):
        vg = vg + mg
        h_series += eps * vg * x ** (s + 1)
        mg = matrix @ mg
        # tail: eps * |g| * sum_{t>s} t x^{t+1}
        tail = eps * g_norm * x * x * ((s + 1) * x**s * (1 - x) + x ** (s + 1)) / (1 - x) ** 2
        if tail <= series_tol * max(1.0, g_norm):
            converged = True
            break
    agreement = float(np.abs(h_series - h_direct).max())
    return ResolventSolution(eps=eps, h_direct=h_direct, h_series=h_series,
                             identity_residual=identity_residual, agreement=agreement,
                             series_converged=converged, series_terms=s,
                             tail_bound=float(tail))


@dataclass(frozen=True)
class TailSumReport:
    eps_values: np.ndarray
    norms: np.ndarray  # weighted L2 norms of h_{eps_k}
    terms: np.ndarray  # sqrt(eps_k) * norm_k
    partial_sums: np.ndarray
    cauchy_gap: float  # contribution of the last quarter of terms

    def as_dict(self) -> dict:
        return {"eps_values": self.eps_values.tolist(), "norms": self.norms.tolist(),
                "terms": self.terms.tolist(), "partial_sums": self.partial_sums.tolist(),
                "cauchy_gap": self.cauchy_gap}


def resolvent_tail_sums(markov_matrix: np.ndarray, g: np.ndarray, eps: float,
                        k_max: int, weights: np.ndarray) -> TailSumReport:
    """Partial sums of sqrt(eps_k) ||h_{eps_k}|| along eps_k = eps / 2^k.

    Norms are L2 with respect to ``weights`` (the stationary measure in all
    shipped uses). Summability in practice shows up as the partial sums
    going Cauchy; the report carries the late-tail contribution.
    """
    matrix = np.asarray(markov_matrix, dtype=float)
    _check_stochastic(matrix)
    weights = np.asarray(weights, dtype=float)
    n = matrix.shape[0]
    eps_values = eps / np.power(2.0, np.arange(k_max + 1))
    norms = np.empty(k_max + 1)
    for k, ek in enumerate(eps_values):
        h = np.linalg.solve((1.0 + ek) * np.eye(n) - matrix, g)
        norms[k] = np.sqrt(float(weights @ (h * h)))
    terms = np.sqrt(eps_values) * norms
    partial = np.cumsum(terms)
    tail_start = max(1, (3 * (k_max + 1)) // 4)
    cauchy_gap = float(partial[-1] - partial[tail_start - 1])
    return TailSumReport(eps_values=eps_values, norms=norms, terms=terms,
                         partial_sums=partial, cauchy_gap=cauchy_gap)
