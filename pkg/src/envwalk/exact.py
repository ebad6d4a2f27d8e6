"""Exact finite-volume oracle: transition matrices, stationary measures,
drift and fluctuation covariance.

On a torus small enough to enumerate every configuration, the environment
chain and the chain seen from the walker become explicit stochastic
matrices. Their left fixed vectors, the solution of the Poisson equation,
and the martingale-increment second moment then give exact values of the
drift and of the Gaussian fluctuation covariance, which the Monte Carlo
layers are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from envwalk.geometry import Geometry, GeometryError, Offset
from envwalk.kernel import DobrushinReport, EnvKernel, dobrushin_constants
from envwalk.walk import WalkModel

DEFAULT_STATE_CAP = 4096
EIG_CAP = 1500  # dense eigendecompositions above this size are not attempted


class StateCapError(ValueError):
    """State space exceeds the configured enumeration cap."""


class OracleError(RuntimeError):
    """A spectral or linear-algebra precondition failed."""


def enumerate_states(kernel: EnvKernel, geom: Geometry,
                     cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """All configurations as an (M, n_sites) array of symbol indices.

    State index is the mixed-radix code of the site values in C-order, site
    0 most significant.
    """
    m = kernel.n_symbols
    n_sites = geom.n_sites
    n_states = m**n_sites
    if n_states > cap:
        raise StateCapError(
            f"{n_states} states exceed the cap of {cap}; shrink the torus or raise the cap"
        )
    codes = np.arange(n_states)
    states = np.empty((n_states, n_sites), dtype=np.int64)
    for s in range(n_sites - 1, -1, -1):
        states[:, s] = codes % m
        codes = codes // m
    return states


def encode_states(values: np.ndarray, m: int) -> np.ndarray:
    """Inverse of :func:`enumerate_states` for (..., n_sites) site values."""
    code = np.zeros(values.shape[:-1], dtype=np.int64)
    for s in range(values.shape[-1]):
        code = code * m + values[..., s]
    return code


def shift_permutation(geom: Geometry, z: Offset, m: int, states: np.ndarray) -> np.ndarray:
    """Permutation perm with perm[i] = index of the configuration shifted by z.

    The shifted configuration at site q holds the original value at q + z.
    """
    lat = states.reshape(states.shape[0], *geom.shape)
    shifted = np.roll(lat, shift=tuple(-int(c) for c in z),
                      axis=tuple(range(1, 1 + geom.dim)))
    return encode_states(shifted.reshape(states.shape[0], -1), m)


def _site_update_laws(kernel: EnvKernel, geom: Geometry, states: np.ndarray) -> np.ndarray:
    """Per-state, per-site update distributions, shape (M, n_sites, m)."""
    lat = states.reshape(states.shape[0], *geom.shape)
    windows = np.stack(
        [np.roll(lat, shift=tuple(-c for c in off), axis=tuple(range(1, 1 + geom.dim)))
         for off in kernel.offsets],
        axis=-1,
    ).reshape(states.shape[0], geom.n_sites, len(kernel.offsets))
    return kernel.site_distributions(windows)


def build_env_operator(kernel: EnvKernel, geom: Geometry,
                       cap: int = DEFAULT_STATE_CAP,
                       states: np.ndarray | None = None) -> np.ndarray:
    """Row-stochastic matrix of the synchronous environment update.

    Entry (i, j) is the product over sites of the probability that the site
    updates to its value in state j, given the windows read from state i.
    """
    if states is None:
        states = enumerate_states(kernel, geom, cap)
    site_laws = _site_update_laws(kernel, geom, states)
    n_states = states.shape[0]
    K = np.ones((n_states, n_states))
    for q in range(geom.n_sites):
        K *= site_laws[:, q, :][:, states[:, q]]
    return K


def walk_probs_for_states(model: WalkModel, geom: Geometry, states: np.ndarray) -> np.ndarray:
    """Step distributions read at the origin of every state, (M, |steps|)."""
    site_index = [geom.site_index(geom.wrap(off)) for off in model.perturbation_support]
    codes = np.zeros(states.shape[0], dtype=np.int64)
    for s in site_index:
        codes = codes * model.n_symbols + states[:, s]
    return model.base + model.delta * model.perturbation[:, codes].T


def build_seen_operator(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                        cap: int = DEFAULT_STATE_CAP,
                        states: np.ndarray | None = None,
                        env_matrix: np.ndarray | None = None) -> np.ndarray:
    """Row-stochastic matrix of the environment seen from the walker.

    From state w the walker steps by z with probability pi_z(w), the
    environment updates by the synchronous kernel, and the new seen state is
    the update re-centered at the walker, so entry (w, w'') sums
    pi_z(w) * K[w, shift_{-z} w''] over steps z.
    """
    if states is None:
        states = enumerate_states(kernel, geom, cap)
    if env_matrix is None:
        env_matrix = build_env_operator(kernel, geom, cap, states)
    if not geom.fits_radius(model.step_range):
        raise GeometryError("walk range does not fit the torus without ambiguity")
    pi = walk_probs_for_states(model, geom, states)
    S = np.zeros_like(env_matrix)
    for zi, z in enumerate(model.offsets):
        perm_minus = shift_permutation(geom, tuple(-c for c in z), kernel.n_symbols, states)
        S += pi[:, zi][:, None] * env_matrix[:, perm_minus]
    return S


def stationary_distribution(matrix: np.ndarray, tol: float = 1e-12,
                            max_iter: int = 10**6, gap_tol: float = 1e-6) -> np.ndarray:
    """Left fixed probability vector of a row-stochastic matrix.

    Power iteration from the uniform vector until the L1 update residual is
    below ``tol``. Uniqueness is asserted through the second-largest
    eigenvalue modulus when the matrix is small enough to decompose.
    """
    n = matrix.shape[0]
    rows = matrix.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > 1e-10 or matrix.min() < -1e-15:
        raise OracleError("input matrix is not row-stochastic")
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = mu @ matrix
        if np.abs(nxt - mu).sum() <= tol:
            mu = nxt
            break
        mu = nxt
    else:
        raise OracleError(f"power iteration did not converge within {max_iter} iterations")
    if n <= EIG_CAP:
        lam2 = second_eigenvalue_modulus(matrix)
        if lam2 >= 1.0 - gap_tol:
            raise OracleError(
                f"second eigenvalue modulus {lam2} leaves the fixed vector non-unique"
            )
    return mu / mu.sum()


def second_eigenvalue_modulus(matrix: np.ndarray) -> float:
    """Largest non-Perron eigenvalue modulus of a row-stochastic matrix."""
    moduli = np.sort(np.abs(np.linalg.eigvals(matrix)))[::-1]
    return float(moduli[1]) if moduli.size > 1 else 0.0


@dataclass(frozen=True)
class DensityRatioReport:
    ratio: np.ndarray
    min: float
    max: float
    mean_under_mu_e: float
    equivalent: bool


def density_ratio(mu: np.ndarray, mu_e: np.ndarray) -> DensityRatioReport:
    """Entrywise dmu/dmu_e; equivalence holds iff the minimum is positive."""
    if np.any(mu_e <= 0):
        raise OracleError("mu_e has a zero entry; the base distribution must be positive")
    ratio = mu / mu_e
    return DensityRatioReport(
        ratio=ratio,
        min=float(ratio.min()),
        max=float(ratio.max()),
        mean_under_mu_e=float((mu_e * ratio).sum()),
        equivalent=bool(ratio.min() > 0),
    )


@dataclass(frozen=True)
class ExactModel:
    """Everything the enumerated small-torus oracle knows."""

    kernel: EnvKernel
    model: WalkModel | None
    geom: Geometry
    states: np.ndarray
    env_matrix: np.ndarray
    mu_e: np.ndarray
    seen_matrix: np.ndarray | None = None
    mu: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def state_index(self, values: np.ndarray) -> np.ndarray:
        """State indices for one configuration or a batch of them."""
        flat = np.asarray(values, dtype=np.int64).reshape(-1, self.geom.n_sites)
        return encode_states(flat, self.kernel.n_symbols)

    def sample_states(self, weights: np.ndarray, n: int, gen: np.random.Generator) -> np.ndarray:
        """Draw configurations from an explicit state distribution, (n, *lattice)."""
        idx = gen.choice(self.n_states, size=n, p=weights / weights.sum())
        return self.states[idx].reshape((n,) + self.geom.shape)


def build_exact_model(kernel: EnvKernel, geom: Geometry, model: WalkModel | None = None,
                      cap: int = DEFAULT_STATE_CAP) -> ExactModel:
    states = enumerate_states(kernel, geom, cap)
    K = build_env_operator(kernel, geom, cap, states)
    mu_e = stationary_distribution(K)
    S = None
    mu = None
    if model is not None:
        S = build_seen_operator(kernel, model, geom, cap, states, K)
        mu = stationary_distribution(S)
    return ExactModel(kernel=kernel, model=model, geom=geom, states=states,
                      env_matrix=K, mu_e=mu_e, seen_matrix=S, mu=mu)


@dataclass(frozen=True)
class DriftSigma:
    """Drift, fluctuation covariance and the Poisson data behind them."""

    v: np.ndarray  # (d,)
    sigma2: np.ndarray  # (d, d)
    g: np.ndarray  # (M, d) local drift per state
    h: np.ndarray  # (M, d) Poisson solution, mu-mean zero
    poisson_residual: float
    min_eigenvalue: float
    positive_definite: bool


def drift_and_sigma(exact: ExactModel) -> DriftSigma:
    """Solve the Poisson equation and accumulate the martingale covariance.

    g(w) = sum_z z pi_z(w); v = mu . g; h solves (Id - S) h = g - v on the
    mu-mean-zero subspace. The covariance is the stationary second moment of
    the martingale increment z - g(w) + h(shift_z w') - (S h)(w), averaging
    over w under mu, the step z, and the environment update w'.
    """
    if exact.seen_matrix is None or exact.mu is None or exact.model is None:
        raise OracleError("drift_and_sigma needs a walk model in the exact model")
    S = exact.seen_matrix
    K = exact.env_matrix
    mu = exact.mu
    model = exact.model
    geom = exact.geom
    n = exact.n_states
    d = geom.dim
    if n <= EIG_CAP:
        gap = 1.0 - second_eigenvalue_modulus(S)
        if gap <= 1e-9:
            raise OracleError("seen chain has no spectral gap; Poisson equation is singular")
    pi = walk_probs_for_states(model, geom, exact.states)
    steps = model.step_array.astype(float)
    g = pi @ steps
    v = mu @ g
    g0 = g - v
    # stacked system pins the mu-average of h to zero; residual certifies it
    A = np.vstack([np.eye(n) - S, mu[None, :]])
    h = np.empty((n, d))
    for k in range(d):
        rhs = np.concatenate([g0[:, k], [0.0]])
        h[:, k] = np.linalg.lstsq(A, rhs, rcond=None)[0]
    poisson_residual = float(np.abs((np.eye(n) - S) @ h - g0).max())
    Sh = S @ h
    sigma2 = np.zeros((d, d))
    for zi, z in enumerate(model.offsets):
        perm = shift_permutation(geom, z, exact.kernel.n_symbols, exact.states)
        h_shift = h[perm]  # h(shift_z w') as a function of w'
        a_part = np.asarray(z, dtype=float)[None, :] - g - Sh  # (M, d), function of w
        mean_b = K @ h_shift  # E[h(shift_z w') | w]
        second_b = np.einsum("ij,jk,jl->ikl", K, h_shift, h_shift)
        weight = mu * pi[:, zi]
        sigma2 += np.einsum("i,ik,il->kl", weight, a_part, a_part)
        sigma2 += np.einsum("i,ik,il->kl", weight, a_part, mean_b)
        sigma2 += np.einsum("i,ik,il->kl", weight, mean_b, a_part)
        sigma2 += np.einsum("i,ikl->kl", weight, second_b)
    sigma2 = (sigma2 + sigma2.T) / 2
    eigs = np.linalg.eigvalsh(sigma2)
    if eigs.min() < -1e-10:
        raise OracleError(f"covariance came out indefinite (min eigenvalue {eigs.min()})")
    return DriftSigma(v=v, sigma2=sigma2, g=g, h=h, poisson_residual=poisson_residual,
                      min_eigenvalue=float(eigs.min()),
                      positive_definite=bool(eigs.min() > 1e-12))


@dataclass(frozen=True)
class MixingReport:
    """Spectral radii on the centered subspace against their predicted bounds."""

    lambda2_env: float
    lambda2_seen: float | None
    dobrushin: DobrushinReport
    env_bound_ok: bool
    seen_bound_ok: bool | None
    tolerance: float = 1e-9

    def as_dict(self) -> dict:
        out = {
            "lambda2_env": self.lambda2_env,
            "env_bound_ok": self.env_bound_ok,
            "tolerance": self.tolerance,
            "dobrushin": self.dobrushin.as_dict(),
        }
        if self.lambda2_seen is not None:
            out["lambda2_seen"] = self.lambda2_seen
            out["seen_bound_ok"] = self.seen_bound_ok
        return out


def mixing_report(exact: ExactModel, model: WalkModel | None = None,
                  tolerance: float = 1e-9) -> MixingReport:
    """Check non-Perron eigenvalue moduli against the coupling constants.

    When the summed sensitivity eta0 is below 1, every non-Perron eigenvalue
    of the environment matrix must have modulus at most eta0; with the walk
    amplification eta1 < 1 the same holds for the seen matrix with eta1. A
    violated bound is reported as a failed flag for escalation, never
    silently absorbed.
    """
    if model is None:
        model = exact.model
    rep = dobrushin_constants(exact.kernel, model)
    lam_env = second_eigenvalue_modulus(exact.env_matrix)
    env_ok = (not rep.a9a) or lam_env <= rep.eta0 + tolerance
    lam_seen = None
    seen_ok = None
    if exact.seen_matrix is not None:
        lam_seen = second_eigenvalue_modulus(exact.seen_matrix)
        if rep.eta1 is not None:
            seen_ok = (not rep.a9b) or lam_seen <= rep.eta1 + tolerance
    return MixingReport(lambda2_env=lam_env, lambda2_seen=lam_seen, dobrushin=rep,
                        env_bound_ok=bool(env_ok),
                        seen_bound_ok=None if seen_ok is None else bool(seen_ok),
                        tolerance=tolerance)


def shift_commutation_defect(matrix: np.ndarray, perm: np.ndarray) -> float:
    """max |P M P^{-1} - M| for the permutation perm (rows i -> perm[i])."""
    conjugated = matrix[perm][:, perm]
    return float(np.abs(conjugated - matrix).max())
