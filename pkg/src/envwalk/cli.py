"""Experiment orchestration and the command-line entry point.

Usage: ``envwalk <kind> --config <path> [--seed S] [--out DIR] [--threads K]``.
Kinds: check, env-sim, walk-sim, pair-sim, encounters, excursion, survival,
exact, resolvent, mw-scan, quenched-clt, annealed-clt. Each run writes
report.json, manifest.json and any series CSVs into the output directory and
exits 0 exactly when every asserted flag held.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace

import numpy as np

from envwalk.config import ConfigError, RunConfig, parse_config
from envwalk.estimators import (
    MWScanConfig,
    annealed_clt_test,
    mw_condition_scan,
    quenched_clt_test,
    resolvent_solver,
    resolvent_tail_sums,
)
from envwalk.exact import build_exact_model, density_ratio, drift_and_sigma, mixing_report
from envwalk.geometry import Geometry
from envwalk.kernel import dobrushin_constants, evolve_history, kernel_tv_sensitivity
from envwalk.lift import DEFAULT_LIFT_CAP, lift_operators, verify_lift
from envwalk.pair import (
    close_encounters,
    encounter_scaling,
    excursion_probability,
    offdiagonal_sum,
    separation_survival,
    simulate_pair,
)
from envwalk.report import ExperimentReport, write_history_table, write_report, write_trajectory_csv
from envwalk.rng import stream
from envwalk.walk import RecordOptions, check_ellipticity, simulate

EXPERIMENT_KINDS = ("check", "env-sim", "walk-sim", "pair-sim", "encounters", "excursion",
                    "survival", "exact", "resolvent", "mw-scan", "quenched-clt",
                    "annealed-clt")


def _oracle_geometry(cfg: RunConfig, section: str) -> Geometry:
    side = int(cfg.section(section).get("side", cfg.section("exact").get("side", cfg.geometry.side)))
    return Geometry(dim=cfg.geometry.dim, side=side)


def _run_check(cfg: RunConfig) -> ExperimentReport:
    kernel = cfg.kernel
    rep = dobrushin_constants(kernel, cfg.walk)
    flags = {"a8_tail_finite": all(v == 0.0 for L, v in rep.tail_sums.items()
                                   if L > kernel.radius),
             "a9a": rep.a9a}
    tv_checks = {}
    for off in kernel.offsets:
        tv = kernel_tv_sensitivity(kernel, off)
        bound = 2 * rep.d_map[off] if all(c == 0 for c in off) else rep.d_map[off]
        tv_checks[",".join(map(str, off))] = {"tv": tv, "bound": bound}
        key = "a6_origin" if all(c == 0 for c in off) else f"a7_offset_{','.join(map(str, off))}"
        flags[key] = tv <= bound + 1e-12
    estimates = {"dobrushin": rep.as_dict(), "tv_sensitivity": tv_checks}
    if cfg.walk is not None:
        ell = check_ellipticity(cfg.walk)
        estimates["ellipticity"] = {"c": ell.c, "gamma": ell.gamma.tolist(),
                                    "gamma_floor": ell.gamma_floor, "span_ok": ell.span_ok}
        flags["a5_ellipticity"] = ell.c > 0 and ell.span_ok
        flags["a9b"] = bool(rep.a9b)
        flags["a9c"] = bool(rep.a9c)
    return ExperimentReport(kind="check", estimates=estimates, flags=flags)


def _run_env_sim(cfg: RunConfig, out_dir: str) -> ExperimentReport:
    sec = cfg.section("env")
    steps = int(sec.get("steps", 200))
    hist = evolve_history(cfg.kernel, cfg.geometry, steps, cfg.run.seed, ("env-sim",),
                          burn_in=cfg.run.burn_in)
    write_history_table(hist.values, f"{out_dir}/history.csv", cfg.kernel.alphabet,
                        {"seed": cfg.run.seed, "labels": ["env-sim"],
                         "config_sha256": cfg.sha256, "steps": steps})
    freq = {str(sym): float((hist.values == i).mean())
            for i, sym in enumerate(cfg.kernel.alphabet)}
    return ExperimentReport(kind="env-sim", estimates={"symbol_frequencies": freq,
                                                       "steps": steps})


def _run_walk_sim(cfg: RunConfig, out_dir: str) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("walk_sim")
    steps = int(sec.get("steps", 10_000))
    record = RecordOptions(env=bool(sec.get("record_env", False)))
    traj = simulate(cfg.kernel, model, cfg.geometry, steps, cfg.run.seed, record=record,
                    burn_in=cfg.run.burn_in)
    write_trajectory_csv(traj.positions, traj.increments, f"{out_dir}/trajectory.csv")
    max_step = int(np.abs(traj.increments).max()) if steps else 0
    return ExperimentReport(
        kind="walk-sim",
        estimates={"drift_estimate": (traj.positions[-1] / steps).tolist(), "steps": steps},
        flags={"increments_bounded": max_step <= model.step_range},
    )


def _run_pair_sim(cfg: RunConfig, out_dir: str) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("pair")
    steps = int(sec.get("steps", 4096))
    a_coeff = float(sec.get("a", 1.0))
    pair = simulate_pair(cfg.kernel, model, cfg.geometry, steps, cfg.run.seed,
                         (cfg.run.seed + 1, cfg.run.seed + 2), burn_in=cfg.run.burn_in)
    dist = pair.distances()
    threshold = a_coeff * math.log(max(steps, 2))
    count = close_encounters(pair, threshold)
    series = {"pair_trajectory": {
        "t": list(range(steps + 1)),
        **{f"x{k}": pair.x_positions[:, k].tolist() for k in range(cfg.geometry.dim)},
        **{f"y{k}": pair.y_positions[:, k].tolist() for k in range(cfg.geometry.dim)},
        "distance": dist.tolist(),
    }}
    return ExperimentReport(
        kind="pair-sim",
        estimates={"encounters": count, "threshold": threshold,
                   "final_distance": int(dist[-1]), "steps": steps},
        flags={"count_in_range": 0 <= count <= steps + 1},
        series=series,
    )


def _run_encounters(cfg: RunConfig) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("pair")
    rep = encounter_scaling(cfg.kernel, model, cfg.geometry,
                            sec.get("n_grid", [1024, 4096, 16384]),
                            float(sec.get("a", 1.0)), int(sec.get("replicas", 200)),
                            cfg.run.seed, chunk=cfg.run.chunk, threads=cfg.run.threads)
    flags = {"fit_defined": not rep.flags["degenerate_fit"]}
    if rep.sublinear is not None:
        flags["sublinear_growth"] = rep.sublinear
    return ExperimentReport(
        kind="encounters",
        estimates=rep.as_dict(),
        thresholds={"exponent_ci_upper_below": 1.0},
        flags=flags,
        warnings={k: v for k, v in rep.flags.items() if v},
        series={"encounters": {"n": list(rep.n_grid), "threshold": list(rep.thresholds),
                               "mean_count": list(rep.mean_counts), "se": list(rep.ses)}},
    )


def _run_excursion(cfg: RunConfig) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("pair")
    rep = excursion_probability(cfg.kernel, model, cfg.geometry, int(sec.get("r", 32)),
                                float(sec.get("epsilon", 1.0)),
                                int(sec.get("excursion_replicas", 10_000)), cfg.run.seed,
                                chunk=cfg.run.chunk, threads=cfg.run.threads,
                                burn_in=cfg.run.burn_in)
    return ExperimentReport(
        kind="excursion",
        estimates=rep.as_dict(),
        thresholds={"separation_probability_at_least": 0.25},
        flags={"barriers_disjoint": not rep.flags["barrier_overlap"]},
        warnings={k: v for k, v in rep.flags.items() if v},
    )


def _run_survival(cfg: RunConfig) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("pair")
    rep = separation_survival(cfg.kernel, model, cfg.geometry,
                              sec.get("survival_n_grid", sec.get("n_grid", [256, 1024, 4096])),
                              float(sec.get("l", 8)), None,
                              int(sec.get("survival_replicas", 2000)), cfg.run.seed,
                              chunk=cfg.run.chunk, threads=cfg.run.threads)
    return ExperimentReport(
        kind="survival",
        estimates=rep.as_dict(),
        flags={"all_positive": rep.all_positive},
        warnings={k: v for k, v in rep.flags.items() if v},
        series={"survival": {"n": list(rep.n_grid), "estimate": list(rep.estimates),
                             "ci_low": list(rep.ci_lows), "ci_high": list(rep.ci_highs)}},
    )


def _run_exact(cfg: RunConfig) -> ExperimentReport:
    sec = cfg.section("exact")
    geom = _oracle_geometry(cfg, "exact")
    exact = build_exact_model(cfg.kernel, geom, cfg.walk, cap=cfg.run.state_cap)
    flags = {}
    estimates: dict = {"states": exact.n_states, "side": geom.side}
    stat_res = float(np.abs(exact.mu_e @ exact.env_matrix - exact.mu_e).sum())
    flags["env_stationarity"] = stat_res <= 1e-10
    estimates["env_stationarity_residual"] = stat_res
    mix = mixing_report(exact)
    estimates["mixing"] = mix.as_dict()
    flags["env_spectral_bound"] = mix.env_bound_ok
    if exact.seen_matrix is not None:
        seen_res = float(np.abs(exact.mu @ exact.seen_matrix - exact.mu).sum())
        flags["seen_stationarity"] = seen_res <= 1e-10
        estimates["seen_stationarity_residual"] = seen_res
        if mix.seen_bound_ok is not None:
            flags["seen_spectral_bound"] = mix.seen_bound_ok
        ds = drift_and_sigma(exact)
        estimates["v"] = ds.v.tolist()
        estimates["sigma2"] = ds.sigma2.tolist()
        estimates["poisson_residual"] = ds.poisson_residual
        flags["poisson_residual"] = ds.poisson_residual <= 1e-10
        flags["sigma2_positive_definite"] = ds.positive_definite
        ratio = density_ratio(exact.mu, exact.mu_e)
        estimates["density_ratio"] = {"min": ratio.min, "max": ratio.max,
                                      "mean_under_mu_e": ratio.mean_under_mu_e}
        flags["measures_equivalent"] = ratio.equivalent
    if bool(sec.get("lift", True)) and exact.n_states <= int(sec.get("lift_cap", DEFAULT_LIFT_CAP)):
        bundle = lift_operators(cfg.kernel, geom)
        ver = verify_lift(bundle, stream(cfg.run.seed, "lift-verify"),
                          n_probes=int(sec.get("lift_probes", 1000)), mu_e=exact.mu_e)
        estimates["lift"] = ver.as_dict()
        flags["lift_identities"] = (ver.telescope_defect <= 1e-12
                                    and ver.projection_defect <= 1e-12
                                    and ver.membership_defect <= 1e-12
                                    and ver.decomposition_defect <= 1e-12)
        flags["lift_contraction"] = ver.contraction_ok and ver.probe_max_ratio <= ver.eta0 + 1e-9
        flags["lift_reconstruction"] = ver.reconstruction_ok
    return ExperimentReport(kind="exact", estimates=estimates, flags=flags,
                            thresholds={"stationarity": 1e-10, "poisson": 1e-10,
                                        "spectral_tolerance": 1e-9,
                                        "lift_reconstruction": 1e-8})


def _run_resolvent(cfg: RunConfig) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("resolvent")
    geom = _oracle_geometry(cfg, "resolvent")
    exact = build_exact_model(cfg.kernel, geom, model, cap=cfg.run.state_cap)
    ds = drift_and_sigma(exact)
    g0 = ds.g[:, 0] - ds.v[0]
    eps = float(sec.get("eps", 0.5))
    sol = resolvent_solver(exact.seen_matrix, g0, eps)
    tails = resolvent_tail_sums(exact.seen_matrix, g0, eps, int(sec.get("k_max", 16)),
                                exact.mu)
    return ExperimentReport(
        kind="resolvent",
        estimates={"solution": sol.as_dict(), "tail_sums": tails.as_dict()},
        thresholds={"identity_residual": 1e-10, "agreement": 1e-8},
        flags={"identity": sol.identity_residual <= 1e-10,
               "agreement": sol.agreement <= 1e-8,
               "series_converged": sol.series_converged},
        series={"resolvent_tail": {"k": list(range(len(tails.eps_values))),
                                   "eps": tails.eps_values.tolist(),
                                   "norm": tails.norms.tolist(),
                                   "term": tails.terms.tolist(),
                                   "partial_sum": tails.partial_sums.tolist()}},
    )


def _run_mw_scan(cfg: RunConfig) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("scan")
    geom = _oracle_geometry(cfg, "scan")
    exact = build_exact_model(cfg.kernel, geom, model, cap=cfg.run.state_cap)
    ds = drift_and_sigma(exact)
    scan_cfg = MWScanConfig(
        n_grid=tuple(sec.get("n_grid", [8, 16, 32])),
        rho=float(sec.get("rho", 1.5)),
        histories=int(sec.get("histories", 1000)),
        start_mode=str(sec.get("mode", "exact-mu")),
        burn_in=cfg.run.burn_in,
    )
    scan = mw_condition_scan(cfg.kernel, model, geom, scan_cfg, ds.v, cfg.run.seed,
                             exact=exact)
    flags = {"bounded": scan.bounded}
    estimates: dict = {"scan": scan.as_dict()}
    off_reps = int(sec.get("offdiag_replicas", 0))
    if off_reps > 0:
        w = np.zeros(geom.dim)
        w[0] = 1.0
        off = offdiagonal_sum(cfg.kernel, model, geom, scan_cfg.n_grid, w, ds.v,
                              off_reps, cfg.run.seed + 1, exact=exact,
                              chunk=cfg.run.chunk, threads=cfg.run.threads)
        estimates["offdiagonal"] = off.as_dict()
        for i, n in enumerate(scan_cfg.n_grid):
            diff = abs(scan.a_squared[i] - off.estimates[i])
            band = 3.0 * math.hypot(scan.a_squared_ses[i], off.ses[i])
            flags[f"identity_n{n}"] = diff <= band
    weights = [n ** (-1.5) * math.log(n) ** scan.rho for n in scan.n_grid]
    return ExperimentReport(
        kind="mw-scan", estimates=estimates, flags=flags,
        thresholds={"identity_band_se": 3.0},
        warnings={"approximate_start": scan.approximate_start,
                  **{k: v for k, v in scan.flags.items() if v}},
        series={"mw_scan": {"n": list(scan.n_grid), "a_n": list(scan.a_values),
                            "weight": weights, "summand": list(scan.summands),
                            "partial_sum": list(scan.partial_sums)}},
    )


def _run_quenched_clt(cfg: RunConfig) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("clt")
    geom = _oracle_geometry(cfg, "clt")
    exact = build_exact_model(cfg.kernel, geom, model, cap=cfg.run.state_cap)
    ds = drift_and_sigma(exact)
    n = int(sec.get("n", 2000))
    rep = quenched_clt_test(cfg.kernel, model, geom, n, int(sec.get("walks", 4000)),
                            int(sec.get("histories", 5)), cfg.run.seed, reference=ds,
                            chunk=cfg.run.chunk, threads=cfg.run.threads,
                            burn_in=cfg.run.burn_in)
    cov_rtol = float(sec.get("cov_rtol", 0.15))
    ks_alpha = float(sec.get("ks_alpha", 0.01))
    ks_fraction = float(sec.get("ks_fraction", 0.8))
    ks_pass = sum(1 for ks in rep.ks_pvalues if min(ks) > ks_alpha)
    flags = {
        "covariances_close": all(e <= cov_rtol for e in rep.rel_errors),
        "normality": ks_pass >= math.ceil(ks_fraction * rep.n_histories),
        "dispersion": bool(rep.dispersion_ok),
    }
    return ExperimentReport(
        kind="quenched-clt", estimates=rep.as_dict(),
        thresholds={"cov_rtol": cov_rtol, "ks_alpha": ks_alpha, "ks_fraction": ks_fraction},
        flags=flags,
        warnings={"wrap_regime": 2 * model.step_range * n >= geom.side / 2},
    )


def _run_annealed_clt(cfg: RunConfig) -> ExperimentReport:
    model = cfg.require_walk()
    sec = cfg.section("clt")
    geom = _oracle_geometry(cfg, "clt")
    exact = build_exact_model(cfg.kernel, geom, model, cap=cfg.run.state_cap)
    ds = drift_and_sigma(exact)
    n = int(sec.get("n", 2000))
    rep = annealed_clt_test(cfg.kernel, model, geom, n, int(sec.get("replicas", 10_000)),
                            cfg.run.seed, reference=ds, chunk=cfg.run.chunk,
                            threads=cfg.run.threads, burn_in=cfg.run.burn_in)
    cov_rtol = float(sec.get("annealed_cov_rtol", 0.10))
    flags = {"covariance_close": all(e <= cov_rtol for e in rep.rel_errors)}
    return ExperimentReport(
        kind="annealed-clt", estimates=rep.as_dict(),
        thresholds={"cov_rtol": cov_rtol}, flags=flags,
        warnings={"wrap_regime": 2 * model.step_range * n >= geom.side / 2},
    )


def run_experiment(kind: str, cfg: RunConfig, out_dir: str | None = None) -> ExperimentReport:
    """Dispatch one experiment kind and stamp provenance.

    Module errors are captured into the report (partial results are still
    written by the caller); the report then counts as failed.
    """
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {EXPERIMENT_KINDS}")
    out_dir = out_dir or cfg.run.out
    started = time.time()
    try:
        if kind == "check":
            report = _run_check(cfg)
        elif kind == "env-sim":
            report = _run_env_sim(cfg, out_dir)
        elif kind == "walk-sim":
            report = _run_walk_sim(cfg, out_dir)
        elif kind == "pair-sim":
            report = _run_pair_sim(cfg, out_dir)
        elif kind == "encounters":
            report = _run_encounters(cfg)
        elif kind == "excursion":
            report = _run_excursion(cfg)
        elif kind == "survival":
            report = _run_survival(cfg)
        elif kind == "exact":
            report = _run_exact(cfg)
        elif kind == "resolvent":
            report = _run_resolvent(cfg)
        elif kind == "mw-scan":
            report = _run_mw_scan(cfg)
        elif kind == "quenched-clt":
            report = _run_quenched_clt(cfg)
        else:
            report = _run_annealed_clt(cfg)
    except Exception as exc:  # surfaced with context; partial report still written
        report = ExperimentReport(kind=kind, error=f"{type(exc).__name__}: {exc}")
    report.provenance.update({
        "seed": cfg.run.seed,
        "config_sha256": cfg.sha256,
        "config_echo": cfg.raw,
        "threads": cfg.run.threads,
        "chunk": cfg.run.chunk,
        "wallclock_s": time.time() - started,
        "condition_summary": cfg.condition_summary,
    })
    return report


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="envwalk",
                                     description="random-walk-in-evolving-environment lab")
    parser.add_argument("kind", choices=EXPERIMENT_KINDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    run = cfg.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.threads is not None:
        run = replace(run, threads=args.threads)
    if args.out is not None:
        run = replace(run, out=args.out)
    cfg = replace(cfg, run=run)
    report = run_experiment(args.kind, cfg, run.out)
    paths = write_report(report, run.out)
    dob = cfg.condition_summary.get("dobrushin", {})
    print(f"{args.kind}: eta0={dob.get('eta0'):.6g}"
          + (f" eta1={dob['eta1']:.6g}" if "eta1" in dob else ""))
    for name, ok in report.flags.items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
    if report.error:
        print(f"  error: {report.error}", file=sys.stderr)
    print(f"report: {paths['report']}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
