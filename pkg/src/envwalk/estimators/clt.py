"""Quenched and annealed fluctuation tests.

The quenched test fixes a handful of environment histories and runs many
independent walks through each: per-history standardized covariances must
agree with the reference matrix, coordinate projections must look Gaussian,
and the spread of per-history covariance estimates must be explainable by
walk noise alone (that is the quenched statement: one limit for almost every
history). The annealed test redraws the environment with every replica.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from envwalk.geometry import Geometry
from envwalk.kernel import EnvKernel, equilibrium_batch, evolve_history, step_values
from envwalk.rng import pick, stream
from envwalk.stats import ChunkPlan, run_chunked
from envwalk.walk import WalkModel, iid_increments, support_codes

DEFAULT_CHUNK = 2048


def walks_on_history(values: np.ndarray, model: WalkModel, geom: Geometry,
                     n_steps: int, m_walks: int, seed: int, labels: tuple,
                     chunk: int = DEFAULT_CHUNK, threads: int = 1) -> np.ndarray:
    """Final positions of ``m_walks`` independent walks on one fixed history."""
    steps = model.step_array

    def chunk_fn(chunk_index: int, start: int, size: int) -> dict[str, np.ndarray]:
        gen = stream(seed, *labels, "walks", chunk_index)
        x = np.zeros((size, geom.dim), dtype=np.int64)
        for t in range(n_steps):
            codes = support_codes(values[t], x, model, geom)
            probs = model.base + model.delta * model.perturbation[:, codes].T
            x = x + steps[pick(probs, gen.random(size))]
        return {"final": x}

    return run_chunked(ChunkPlan(m_walks, chunk), chunk_fn, threads)["final"]


def annealed_positions(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                       n_steps: int, replicas: int, seed: int, labels: tuple,
                       snapshot_times: tuple[int, ...] | None = None,
                       chunk: int = DEFAULT_CHUNK, threads: int = 1,
                       burn_in: int = 64) -> dict[int, np.ndarray]:
    """Positions at the requested times with a fresh environment per replica.

    When the walk does not read the environment (delta == 0) the increments
    are drawn directly, which keeps the degenerate control experiments
    cheap.
    """
    times = tuple(sorted(set(snapshot_times or (n_steps,))))
    if times[-1] > n_steps:
        raise ValueError("snapshot beyond the horizon")
    steps = model.step_array

    def chunk_fn(chunk_index: int, start: int, size: int) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if model.delta == 0:
            gen = stream(seed, *labels, "walks", chunk_index)
            incs = iid_increments(model, n_steps, gen, batch=size)
            cum = np.cumsum(incs, axis=1)
            for t in times:
                out[f"t{t}"] = (cum[:, t - 1, :] if t > 0
                                else np.zeros((size, geom.dim), dtype=np.int64))
            return out
        env_gen = stream(seed, *labels, "env", chunk_index)
        walk_gen = stream(seed, *labels, "walks", chunk_index)
        values = equilibrium_batch(kernel, geom, burn_in, size, env_gen)
        x = np.zeros((size, geom.dim), dtype=np.int64)
        for t in range(n_steps + 1):
            if t in times:
                out[f"t{t}"] = x.copy()
            if t == n_steps:
                break
            codes = support_codes(values, x, model, geom)
            probs = model.base + model.delta * model.perturbation[:, codes].T
            x = x + steps[pick(probs, walk_gen.random(size))]
            values = step_values(values, kernel, geom, env_gen)
        return out

    res = run_chunked(ChunkPlan(replicas, chunk), chunk_fn, threads)
    return {t: res[f"t{t}"] for t in times}


def estimate_drift(kernel: EnvKernel, model: WalkModel, geom: Geometry,
                   n_steps: int, replicas: int, seed: int,
                   chunk: int = DEFAULT_CHUNK, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Pre-run drift estimate with its standard error, one value per axis."""
    finals = annealed_positions(kernel, model, geom, n_steps, replicas, seed,
                                ("drift-prerun",), chunk=chunk, threads=threads)[n_steps]
    per_rep = finals / n_steps
    return per_rep.mean(axis=0), per_rep.std(axis=0, ddof=1) / math.sqrt(replicas)


def _cov(xhat: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.cov(xhat.T, ddof=1))


def _ks_pvalues(xhat: np.ndarray, sigma2: np.ndarray, proj: np.ndarray) -> list[float]:
    """KS p-values of each coordinate and one extra projection against the
    centered Gaussian with the given covariance."""
    pvals = []
    for c in range(xhat.shape[1]):
        scale = math.sqrt(max(sigma2[c, c], 1e-300))
        pvals.append(float(sps.kstest(xhat[:, c] / scale, "norm").pvalue))
    scale = math.sqrt(max(float(proj @ sigma2 @ proj), 1e-300))
    pvals.append(float(sps.kstest((xhat @ proj) / scale, "norm").pvalue))
    return pvals


@dataclass(frozen=True)
class CLTReport:
    """Outcome of a fluctuation test; per-history fields stay singletons for
    the annealed variant."""

    kind: str
    n_steps: int
    walks_per_history: int
    n_histories: int
    v_used: np.ndarray
    v_source: str
    reference_sigma2: np.ndarray | None
    covariances: list[np.ndarray]
    ks_pvalues: list[list[float]]
    skewness: list[list[float]]
    excess_kurtosis: list[list[float]]
    rel_errors: list[float] | None
    dispersion_stat: float | None = None
    dispersion_q99: float | None = None
    dispersion_ok: bool | None = None
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "kind": self.kind, "n_steps": self.n_steps,
            "walks_per_history": self.walks_per_history, "n_histories": self.n_histories,
            "v_used": np.asarray(self.v_used).tolist(), "v_source": self.v_source,
            "covariances": [np.asarray(c).tolist() for c in self.covariances],
            "ks_pvalues": self.ks_pvalues, "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis, "flags": dict(self.flags),
        }
        if self.reference_sigma2 is not None:
            out["reference_sigma2"] = np.asarray(self.reference_sigma2).tolist()
            out["rel_errors"] = self.rel_errors
        if self.dispersion_stat is not None:
            out.update(dispersion_stat=self.dispersion_stat,
                       dispersion_q99=self.dispersion_q99, dispersion_ok=self.dispersion_ok)
        return out


def _dispersion_test(xhats: list[np.ndarray], seed: int, n_boot: int = 400,
                     quantile: float = 0.99) -> tuple[float, float, bool]:
    """Across-history variance of per-history variances against a pooled
    bootstrap null in which every history shares one law."""
    h = len(xhats)
    m = xhats[0].shape[0]
    d = xhats[0].shape[1]
    per_hist_var = np.stack([x.var(axis=0, ddof=1) for x in xhats])  # (H, d)
    stat = per_hist_var.var(axis=0, ddof=1)  # (d,)
    pooled = np.concatenate(xhats, axis=0)
    gen = stream(seed, "dispersion-null")
    null = np.empty((n_boot, d))
    for b in range(n_boot):
        draw = pooled[gen.integers(0, pooled.shape[0], size=h * m)].reshape(h, m, d)
        null[b] = draw.var(axis=1, ddof=1).var(axis=0, ddof=1)
    q99 = np.quantile(null, quantile, axis=0)
    ratios = stat / np.maximum(q99, 1e-300)
    worst = int(np.argmax(ratios))
    return float(stat[worst]), float(q99[worst]), bool(np.all(stat <= q99))


def quenched_clt_test(kernel: EnvKernel, model: WalkModel, geom: Geometry, n_steps: int,
                      m_walks: int, h_histories: int, seed: int,
                      reference=None, chunk: int = DEFAULT_CHUNK, threads: int = 1,
                      burn_in: int = 64) -> CLTReport:
    """Fix ``h_histories`` environment histories; per history, standardize
    ``m_walks`` endpoints and test covariance, normality, and cross-history
    agreement.

    ``reference`` may carry exact drift and covariance (oracle output with
    fields v and sigma2); without it the drift comes from a tenfold-longer
    pre-run and normality is judged against the per-history sample scale.
    """
    if m_walks < 100:
        raise ValueError("fewer than 100 walks per history cannot standardize a covariance")
    flags: dict = {}
    if reference is not None:
        v = np.asarray(reference.v, dtype=float)
        sigma_ref = np.atleast_2d(np.asarray(reference.sigma2, dtype=float))
        v_source = "reference"
    else:
        v, v_se = estimate_drift(kernel, model, geom, 10 * n_steps,
                                 max(256, m_walks // 8), seed, chunk, threads)
        sigma_ref = None
        v_source = "pre-run"
        flags["v_se_scaled"] = float(np.max(v_se) * n_steps / math.sqrt(n_steps))
    proj_gen = stream(seed, "qclt", "proj")
    proj = proj_gen.standard_normal(geom.dim)
    proj /= np.linalg.norm(proj)

    xhats = []
    covs, ks_lists, skews, kurts, rel_errs = [], [], [], [], []
    for h in range(h_histories):
        hist = evolve_history(kernel, geom, n_steps, seed, ("qclt", h), burn_in=burn_in)
        finals = walks_on_history(hist.values, model, geom, n_steps, m_walks,
                                  seed, ("qclt", h), chunk, threads)
        xhat = (finals - n_steps * v) / math.sqrt(n_steps)
        xhats.append(xhat)
        cov = _cov(xhat)
        covs.append(cov)
        sig = sigma_ref if sigma_ref is not None else cov
        ks_lists.append(_ks_pvalues(xhat - xhat.mean(axis=0), sig, proj))
        skews.append([float(sps.skew(xhat[:, c])) for c in range(geom.dim)])
        kurts.append([float(sps.kurtosis(xhat[:, c])) for c in range(geom.dim)])
        if sigma_ref is not None:
            rel_errs.append(float(np.linalg.norm(cov - sigma_ref) / np.linalg.norm(sigma_ref)))
    disp_stat, disp_q99, disp_ok = _dispersion_test(xhats, seed)
    return CLTReport(
        kind="quenched", n_steps=n_steps, walks_per_history=m_walks,
        n_histories=h_histories, v_used=v, v_source=v_source,
        reference_sigma2=sigma_ref, covariances=covs, ks_pvalues=ks_lists,
        skewness=skews, excess_kurtosis=kurts,
        rel_errors=rel_errs if sigma_ref is not None else None,
        dispersion_stat=disp_stat, dispersion_q99=disp_q99, dispersion_ok=disp_ok,
        flags=flags,
    )


def annealed_clt_test(kernel: EnvKernel, model: WalkModel, geom: Geometry, n_steps: int,
                      replicas: int, seed: int, reference=None,
                      chunk: int = DEFAULT_CHUNK, threads: int = 1,
                      burn_in: int = 64) -> CLTReport:
    """Fresh environment per replica; same statistics as the quenched test
    with a single pooled ensemble."""
    if replicas < 100:
        raise ValueError("fewer than 100 replicas cannot standardize a covariance")
    flags: dict = {}
    if reference is not None:
        v = np.asarray(reference.v, dtype=float)
        sigma_ref = np.atleast_2d(np.asarray(reference.sigma2, dtype=float))
        v_source = "reference"
    else:
        v, v_se = estimate_drift(kernel, model, geom, 10 * n_steps,
                                 max(256, replicas // 8), seed, chunk, threads)
        sigma_ref = None
        v_source = "pre-run"
        flags["v_se_scaled"] = float(np.max(v_se) * n_steps / math.sqrt(n_steps))
    finals = annealed_positions(kernel, model, geom, n_steps, replicas, seed,
                                ("aclt",), chunk=chunk, threads=threads,
                                burn_in=burn_in)[n_steps]
    xhat = (finals - n_steps * v) / math.sqrt(n_steps)
    cov = _cov(xhat)
    proj_gen = stream(seed, "aclt", "proj")
    proj = proj_gen.standard_normal(geom.dim)
    proj /= np.linalg.norm(proj)
    sig = sigma_ref if sigma_ref is not None else cov
    rel = None
    if sigma_ref is not None:
        rel = [float(np.linalg.norm(cov - sigma_ref) / np.linalg.norm(sigma_ref))]
    return CLTReport(
        kind="annealed", n_steps=n_steps, walks_per_history=replicas, n_histories=1,
        v_used=v, v_source=v_source, reference_sigma2=sigma_ref, covariances=[cov],
        ks_pvalues=[_ks_pvalues(xhat - xhat.mean(axis=0), sig, proj)],
        skewness=[[float(sps.skew(xhat[:, c])) for c in range(geom.dim)]],
        excess_kurtosis=[[float(sps.kurtosis(xhat[:, c])) for c in range(geom.dim)]],
        rel_errors=rel, flags=flags,
    )
