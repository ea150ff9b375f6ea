"""Batch command-line front end.

Usage: ``branchimm <command> <config.yaml> [flags]``.  Flags --seed,
--replicas, --jobs override the configuration (as do BRANCHIMM_* environment
variables); --out selects the report directory; --check turns statistical
gates into the exit code.

Exit codes: 0 success, 1 failed checks under --check, 2 configuration or
model errors, 3 population overflow (supercritical run).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import (acceptance, analytic_gw, ctmc, random_env, reporting,
               scaling_limits, spatial)
from .config import ConfigError, RunConfig, load_config
from .ctmc import ModelError, PopulationOverflowError
from .models import (ByPopulationLevel, FiniteSet, MarkovChainEnv,
                     SpatialField, Torus)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_OVERFLOW = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="branchimm",
        description="simulate birth-death-immigration models and verify "
                    "their analytic moment, distribution, and covariance "
                    "formulas against Monte Carlo")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--env-seed", type=int, default=None,
                       help="environment seed (defaults to the master seed)")
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None,
                       help="concurrent replica workers")
        p.add_argument("--check", action="store_true",
                       help="exit 1 when a statistical gate fails")
        p.add_argument("--out", default=None, help="report directory")
        return p

    p = add("simulate", "run replicas of the configured model")
    p.add_argument("--event-log", action="store_true",
                   help="write one TSV event log per replica")
    p = add("moments", "analytic moment curves, optionally gated against MC")
    p.add_argument("--order", type=int, default=2)
    add("invariant", "invariant distribution and its normalizer")
    add("classify", "recurrence classification of the configured rates")
    p = add("clt-check", "pointwise Gaussian profile of the invariant law")
    p.add_argument("--k-scale", type=float, default=None)
    p.add_argument("--l-max", type=int, default=None)
    p = add("clt", "equilibrium fluctuation (Ornstein-Uhlenbeck) check")
    p.add_argument("--k-scale", type=float, default=None)
    p.add_argument("--t", type=float, default=None)
    add("finite-moments", "per-site mean curves on a finite site set")
    p = add("fourier-cov", "limiting lag covariance via the kernel symbol")
    p.add_argument("--convention", default="balance",
                   choices=spatial.CONVENTIONS)
    p.add_argument("--side", type=int, default=None)
    p = add("env-series", "quenched ergodicity series for sampled environments")
    p.add_argument("--environments", type=int, default=1)
    p.add_argument("--n-terms", type=int, default=None)
    add("env-spectral", "environment-averaged stationary mean via spectrum")
    add("env-two-state", "two-state environment ergodicity verdict")
    add("env-spatial", "spatial environment growth/plateau dichotomy")
    p = add("check-all", "run the full acceptance battery")
    p.add_argument("--quick", action="store_true",
                   help="reduced replica counts; skips the determinism run")
    p.add_argument("--criteria", default=None,
                   help="comma-separated criterion numbers to run")
    return ap


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("BRANCHIMM_OUT") or "branchimm-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _params_comment(cfg: RunConfig) -> list[str]:
    try:
        p = cfg.rates()
    except ConfigError:
        return []
    return [f"params: beta={p.beta:g} mu={p.mu:g} k={p.k:g} kappa={p.kappa:g}"]


def _write(cfg: RunConfig, out: Path, name: str, columns, rows,
           extra=()) -> None:
    path = reporting.write_csv(out / name, columns, rows,
                               config_hash=cfg.config_hash,
                               master_seed=cfg.seed, extra=extra)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args, out: Path) -> int:
    grid = cfg.grid()
    horizon = cfg.horizon
    replicas = cfg.replicas
    event_dir = out / "events"
    if "environment" in cfg.raw:
        env = cfg.environment()
        n_sites = env.space.n_sites if isinstance(env, SpatialField) else 1
        n0 = cfg.n0 if not isinstance(env, SpatialField) else 0

        def one(i: int):
            r = ctmc.simulate_env(env, horizon, grid, cfg.seed, n0=n0,
                                  replica=i, env_seed=cfg.env_seed)
            return r.counts
    else:
        params, space = cfg.validated_model()
        n_sites = space.n_sites
        record = args.event_log

        def one(i: int):
            if isinstance(space, Torus):
                r = ctmc.simulate_torus(params, space,
                                        np.full(n_sites, cfg.n0, dtype=np.int64),
                                        horizon, grid, cfg.seed, replica=i,
                                        record_events=record)
            elif isinstance(space, FiniteSet):
                r = ctmc.simulate_finite_space(params, space,
                                               np.full(n_sites, cfg.n0, dtype=np.int64),
                                               horizon, grid, cfg.seed, replica=i,
                                               record_events=record)
            else:
                r = ctmc.simulate_single_site(params, cfg.n0, horizon, grid,
                                              cfg.seed, replica=i,
                                              record_events=record)
            if record:
                event_dir.mkdir(parents=True, exist_ok=True)
                r.events.write(event_dir / f"replica_{i:06d}.tsv")
            return r.counts

    from .stats import PowerSums

    acc = None
    tot = None
    for counts in ctmc.map_replicas(one, replicas, jobs=cfg.jobs):
        if acc is None:
            acc = PowerSums(counts.shape)
            tot = PowerSums((counts.shape[0],))
        acc.add(counts)
        tot.add(counts.sum(axis=1))
    rows = []
    for gi, t in enumerate(grid):
        for x in range(n_sites):
            rows.append((t, x, acc.mean[gi, x], acc.var[gi, x], acc.se_mean[gi, x]))
        rows.append((t, "total", tot.mean[gi], tot.var[gi], tot.se_mean[gi]))
    _write(cfg, out, "simulate.csv", ("time", "site", "mean", "var", "se_mean"), rows)
    if args.event_log:
        print(f"wrote event logs under {event_dir}")
    return EXIT_OK


def cmd_moments(cfg: RunConfig, args, out: Path) -> int:
    params = cfg.rates()
    grid = cfg.grid()
    order = max(1, args.order)
    series = analytic_gw.moments_ode(params, grid, order, n0=cfg.n0)
    critical = params.beta == params.mu
    closed = {}
    if not critical:
        for gi, t in enumerate(grid):
            mv = analytic_gw.moments_closed_form(params, t, order=min(order, 2),
                                                 n0=cfg.n0)
            closed[gi] = mv.values
    check_failed = False
    mc_stats = None
    if args.check:
        replicas = cfg.replicas

        def one(i: int):
            r = ctmc.simulate_single_site(params, cfg.n0, cfg.horizon, grid,
                                          cfg.seed, replica=i)
            n = r.counts[:, 0].astype(float)
            return np.stack([n**j for j in range(1, order + 1)], axis=1)

        from .stats import PowerSums
        mc_stats = PowerSums((len(grid), order))
        for v in ctmc.map_replicas(one, replicas, jobs=cfg.jobs):
            mc_stats.add(v)
    columns = ["time", "order", "ode", "closed_form"]
    if mc_stats is not None:
        columns += ["mc_mean", "mc_se", "z", "passed"]
    rows = []
    bias = cfg.oracle_bias
    for gi, t in enumerate(grid):
        for j in range(1, order + 1):
            row = [t, j, series[j - 1].values[gi]]
            target = closed[gi][j - 1] if (not critical and j <= 2) else None
            row.append(target)
            if mc_stats is not None:
                est = float(mc_stats.mean[gi, j - 1])
                se = float(mc_stats.se_mean[gi, j - 1])
                ref = (target if target is not None else series[j - 1].values[gi])
                ref = ref * bias
                z = (est - ref) / se if se > 0 else math.inf
                ok = abs(z) <= 3.0
                check_failed = check_failed or not ok
                row += [est, se, z, ok]
            rows.append(tuple(row))
    _write(cfg, out, "moments.csv", columns, rows, extra=_params_comment(cfg))
    if critical:
        print("critical rates (beta == mu): closed forms unavailable, "
              "ODE curves reported")
    if args.check and check_failed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_invariant(cfg: RunConfig, args, out: Path) -> int:
    params = cfg.rates()
    dist = analytic_gw.invariant_distribution(
        params, tail_tol=cfg.tolerance("invariant_tail", 1e-12))
    closed = analytic_gw.s_tilde_closed_form(params)
    rows = [(n, w) for n, w in enumerate(dist.weights)]
    _write(cfg, out, "invariant.csv", ("n", "pi"), rows,
           extra=_params_comment(cfg))
    summary = [
        ("s_tilde", dist.s_tilde),
        ("s_tilde_closed_form", closed),
        ("s_tilde_rel_err", abs(dist.s_tilde - closed) / closed),
        ("tail_bound", dist.tail_bound),
        ("n_max", dist.n_max),
        ("mean", dist.mean()),
        ("mean_target", params.k / (params.mu - params.beta)),
        ("detailed_balance_residual", dist.detailed_balance_residual()),
    ]
    check_failed = False
    if args.check:
        n_events = int(cfg.sim_value("n_terms", default=100_000, cast=int))
        emp = acceptance.occupation_histogram(params, n_events,
                                              acceptance._derived_seed(cfg.seed, 3))
        from .stats import total_variation
        tv = total_variation(emp, dist.weights)
        tol = cfg.tolerance("invariant_tv", 0.02)
        summary.append(("occupation_tv", tv))
        summary.append(("occupation_tv_tol", tol))
        check_failed = tv >= tol
    _write(cfg, out, "invariant_summary.csv", ("quantity", "value"), summary,
           extra=_params_comment(cfg))
    return EXIT_CHECK_FAILED if (args.check and check_failed) else EXIT_OK


def cmd_classify(cfg: RunConfig, args, out: Path) -> int:
    params = cfg.rates()
    cls = analytic_gw.classify(params)
    print(str(cls))
    _write(cfg, out, "classify.csv", ("beta", "mu", "k", "class"),
           [(params.beta, params.mu, params.k, str(cls))],
           extra=_params_comment(cfg))
    return EXIT_OK


def cmd_clt_check(cfg: RunConfig, args, out: Path) -> int:
    params = cfg.rates()
    k_scale = args.k_scale if args.k_scale is not None else \
        cfg.sim_value("k_scale", default=params.k, cast=float)
    l_max = args.l_max if args.l_max is not None else \
        min(20, int(k_scale ** (2.0 / 3.0)))
    prof = analytic_gw.local_clt_profile(params, range(-l_max, l_max + 1),
                                         k_scale=k_scale)
    _write(cfg, out, "clt_check.csv", ("l", "pi", "gauss", "ratio"),
           list(prof.rows()), extra=_params_comment(cfg))
    print(f"center={prof.center} sigma2={prof.sigma2:g} "
          f"max|ratio-1|={prof.max_abs_error:.6f}")
    if args.check and prof.max_abs_error >= cfg.tolerance("local_clt", 0.05):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_clt(cfg: RunConfig, args, out: Path) -> int:
    params = cfg.rates()
    k_scale = args.k_scale if args.k_scale is not None else \
        cfg.sim_value("k_scale", default=500.0, cast=float)
    t = args.t if args.t is not None else cfg.sim_value("t", default=5.0,
                                                        cast=float)
    report = scaling_limits.verify_clt(params, k_scale, cfg.replicas, t,
                                       cfg.seed, jobs=cfg.jobs)
    row = (report.k_scale, report.t, report.replicas, report.zeta0,
           report.mean, report.se_mean, report.mean_target,
           report.variance, report.se_variance, report.variance_target,
           report.ad_statistic, report.ad_critical, report.normality_passed)
    _write(cfg, out, "clt.csv",
           ("k_scale", "t", "replicas", "zeta0", "mean", "se_mean",
            "mean_target", "variance", "se_variance", "variance_target",
            "ad_statistic", "ad_critical", "normality_passed"), [row])
    print(str(report.variance_check))
    if args.check and not (report.variance_check.passed
                           and report.mean_check.passed
                           and report.normality_passed):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_finite_moments(cfg: RunConfig, args, out: Path) -> int:
    params, space = cfg.validated_model()
    if not isinstance(space, FiniteSet):
        raise ConfigError("finite-moments requires space variant 'finite'")
    system = spatial.FirstMomentSystem.from_finite_set(params, space)
    grid = cfg.grid()
    sol = spatial.solve_first_moment(system, np.full(space.n_sites, float(cfg.n0)),
                                     grid)
    rows = [(t, x, sol.values[gi, x])
            for gi, t in enumerate(grid) for x in range(space.n_sites)]
    _write(cfg, out, "finite_moments.csv", ("time", "site", "m1"), rows)
    steady_rows = []
    if sol.steady_state is not None:
        steady_rows = [(x, sol.steady_state[x]) for x in range(space.n_sites)]
    else:
        print("drift matrix not stable: steady state absent")
    _write(cfg, out, "finite_moments_steady.csv", ("site", "steady_m1"),
           steady_rows)
    return EXIT_OK


def cmd_fourier_cov(cfg: RunConfig, args, out: Path) -> int:
    params = cfg.rates()
    kern = cfg.kernel()
    side = args.side
    if side is None:
        space = cfg.space()
        side = space.side if isinstance(space, Torus) else 64
    spectrum, lag_cov = spatial.limiting_covariance(params, kern, side,
                                                    args.convention)
    spec_rows = []
    for i in range(len(spectrum.a_hat)):
        theta = spectrum.thetas[i]
        spec_rows.append((i, *[float(v) for v in theta],
                          spectrum.a_hat[i], spectrum.m2_hat[i]))
    theta_cols = tuple(f"theta_{d}" for d in range(kern.dim))
    _write(cfg, out, "fourier_cov_spectrum.csv",
           ("index", *theta_cols, "a_hat", "m2_hat"), spec_rows)
    lag_rows = []
    for i in range(len(lag_cov.values)):
        lag_rows.append((*[int(v) for v in lag_cov.lags[i]], lag_cov.values[i]))
    lag_cols = tuple(f"u_{d}" for d in range(kern.dim))
    _write(cfg, out, "fourier_cov_lags.csv", (*lag_cols, "m2_tilde"), lag_rows)
    print(f"convention={args.convention} c1={spectrum.c1:g} "
          f"c2={spectrum.c2:g} c3={spectrum.c3:g}")
    return EXIT_OK


def cmd_env_series(cfg: RunConfig, args, out: Path) -> int:
    env = cfg.environment()
    if not isinstance(env, ByPopulationLevel):
        raise ConfigError("env-series requires a by_population_level environment")
    n_terms = args.n_terms or cfg.sim_value("n_terms", default=4000, cast=int)
    rows = []
    for i in range(args.environments):
        env_seed = int(np.random.SeedSequence(cfg.env_seed, spawn_key=(i,))
                       .generate_state(1, np.uint64)[0])
        rep = random_env.quenched_series(env, n_terms, env_seed)
        rows.append((env_seed, rep.criterion, rep.criterion_se, rep.slope,
                     rep.slope_se, rep.verdict))
    _write(cfg, out, "env_series.csv",
           ("env_seed", "criterion", "criterion_se", "slope", "slope_se",
            "verdict"), rows)
    print(rows[-1][-1])
    return EXIT_OK


def cmd_env_spectral(cfg: RunConfig, args, out: Path) -> int:
    raw = cfg.raw.get("environment")
    if not isinstance(raw, dict) or raw.get("variant") != "spectral":
        raise ConfigError("env-spectral requires environment variant 'spectral' "
                          "with keys generator, delta, mean_k")
    try:
        env = random_env.SpectralEnvironment(
            generator=np.array(raw["generator"], dtype=float),
            delta_potential=np.array(raw["delta"], dtype=float))
        mean_k = float(raw.get("mean_k", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad spectral environment: {exc}") from exc
    res = random_env.spectral_mean(env, mean_k)
    rows = [("eigen_sum", res.eigen_sum),
            ("linear_solve", res.linear_solve),
            ("agreement", res.agreement),
            ("delta", env.delta)]
    rows += [(f"eigenvalue_{i}", v) for i, v in enumerate(res.eigenvalues)]
    _write(cfg, out, "env_spectral.csv", ("quantity", "value"), rows)
    print(f"mean={res.eigen_sum:.12g} agreement={res.agreement:.3g}")
    return EXIT_OK


def cmd_env_two_state(cfg: RunConfig, args, out: Path) -> int:
    env = cfg.environment()
    if not isinstance(env, MarkovChainEnv) or env.n_states != 2:
        raise ConfigError("env-two-state requires a markov_chain environment "
                          "with two states")
    verdict = random_env.two_state_ergodicity(env)
    rows = [(verdict.verdict, verdict.delta, verdict.k_max, verdict.threshold)]
    check_failed = False
    if args.check:
        t = cfg.sim_value("t", default=100.0, cast=float)
        grid = np.array([t / 2.0, t])
        from .stats import PowerSums, ZCheck
        diff = PowerSums()

        def one(i: int):
            r = ctmc.simulate_env(env, t, grid, cfg.seed, n0=cfg.n0, replica=i)
            return float(r.counts[1, 0] - r.counts[0, 0])

        for v in ctmc.map_replicas(one, cfg.replicas, jobs=cfg.jobs):
            diff.add(v)
        zc = ZCheck("mean drift between t/2 and t", 0.0, float(diff.mean),
                    float(diff.se_mean))
        print(str(zc))
        check_failed = not zc.passed
    _write(cfg, out, "env_two_state.csv",
           ("verdict", "delta", "k_max", "threshold"), rows)
    print(verdict.verdict)
    return EXIT_CHECK_FAILED if (args.check and check_failed) else EXIT_OK


def cmd_env_spatial(cfg: RunConfig, args, out: Path) -> int:
    env = cfg.environment()
    if not isinstance(env, SpatialField):
        raise ConfigError("env-spatial requires a spatial_field environment")
    grid = cfg.grid()
    report = random_env.case_dichotomy(env, grid, cfg.replicas, cfg.seed,
                                       jobs=cfg.jobs)
    curve_rows = [(t, report.mean_curve[i], report.se_curve[i])
                  for i, t in enumerate(grid)]
    _write(cfg, out, "env_spatial.csv", ("time", "mean_per_site", "se"),
           curve_rows)
    summary = [("case", report.case)]
    if report.case == "I":
        summary += [("slope", report.slope), ("slope_se", report.slope_se),
                    ("slope_lower_bound", report.lower_bound_slope)]
    else:
        summary += [("plateau", report.plateau), ("plateau_se", report.plateau_se),
                    ("plateau_bound", report.plateau_bound),
                    ("plateau_flat", report.plateau_flat)]
    _write(cfg, out, "env_spatial_summary.csv", ("quantity", "value"), summary)
    for c in report.checks:
        print(str(c))
    if args.check and not report.passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def report_summary(rows: list[dict], out: Path, cfg: RunConfig) -> bool:
    """Human-readable table plus machine JSON-lines; returns overall pass."""
    columns = ("criterion", "name", "claim", "analytic", "estimate", "se",
               "z", "passed")
    table_rows = [tuple(r[c] for c in columns) for r in rows]
    print(reporting.render_table(columns, table_rows))
    reporting.write_csv(out / "check_all.csv", columns + ("note",),
                        [tuple(r[c] for c in columns + ("note",)) for r in rows],
                        config_hash=cfg.config_hash, master_seed=cfg.seed)
    reporting.write_jsonl(out / "check_all.jsonl", rows,
                          config_hash=cfg.config_hash, master_seed=cfg.seed)
    print(f"wrote {out / 'check_all.csv'} and {out / 'check_all.jsonl'}")
    return all(r["passed"] for r in rows)


def cmd_check_all(cfg: RunConfig, args, out: Path) -> int:
    select = None
    if args.criteria:
        try:
            select = [int(v) for v in args.criteria.split(",") if v]
        except ValueError as exc:
            raise ConfigError(f"bad --criteria: {exc}") from exc
    results = acceptance.run_criteria(seed=cfg.seed, quick=args.quick,
                                      jobs=cfg.jobs, select=select)
    rows = acceptance.rows_as_dicts(results)
    all_ok = report_summary(rows, out, cfg)
    n_fail = sum(1 for r in results if not r.passed)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    if args.check and not all_ok:
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "invariant": cmd_invariant,
    "classify": cmd_classify,
    "clt-check": cmd_clt_check,
    "clt": cmd_clt,
    "finite-moments": cmd_finite_moments,
    "fourier-cov": cmd_fourier_cov,
    "env-series": cmd_env_series,
    "env-spectral": cmd_env_spectral,
    "env-two-state": cmd_env_two_state,
    "env-spatial": cmd_env_spatial,
    "check-all": cmd_check_all,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "replicas": args.replicas,
                 "jobs": args.jobs, "env_seed": args.env_seed}
    try:
        cfg = load_config(args.config, overrides=overrides)
        out = _out_dir(args)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PopulationOverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW


if __name__ == "__main__":
    sys.exit(main())
