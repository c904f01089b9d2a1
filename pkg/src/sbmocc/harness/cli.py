"""Command-line entry point: ``sbmocc {hitting,moments,simulate,analyze,suite}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .. import hitting, moments, simulate, stats
from ..kernel import ConfigurationError, DimensionParams, DomainError, NumericError
from . import figures
from .config import ExperimentConfig, env_workers, output_root
from .persist import ChecksumError, RunExistsError, persist_run, verify_run
from .suite import SuiteSettings, run_suite, verdict_dict

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
STOCHASTIC = {"simulate", "analyze", "suite"}


class UsageError(Exception):
    pass


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbmocc", description="Small-ball occupation of super-Brownian motion: "
                                "semilinear hitting solver, moment tables, lattice simulation and fits.")
    sub = p.add_subparsers(dest="kind", required=True)

    def common(sp):
        sp.add_argument("--config", help="sectioned key = value file; flags override it")
        sp.add_argument("--out", help="run directory (default: $SBMOCC_OUTPUT_ROOT/<kind>-<config hash>)")
        sp.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    h = sub.add_parser("hitting", help="solve the radial hitting problem")
    common(h)
    h.add_argument("--d", type=int)
    h.add_argument("--eps", help="comma-separated inner radii")
    h.add_argument("--r-max", type=float)
    h.add_argument("--probe", help="comma-separated radii at which to report u")
    h.add_argument("--points", type=int)

    m = sub.add_parser("moments", help="excursion-measure moment tables and constants")
    common(m)
    m.add_argument("--d", type=int)
    m.add_argument("--eps", type=float)
    m.add_argument("--p-max", type=int)
    m.add_argument("--s", help="comma-separated query radii")
    m.add_argument("--profile", choices=sorted(moments.PROFILES))
    m.add_argument("--per-decade", type=int)
    m.add_argument("--kappa", type=float, help="kappa_d for d >= 5 (solved for if omitted)")

    s = sub.add_parser("simulate", help="critical branching random walk runs")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--mode", choices=("batch", "conditioned", "probe"))
    s.add_argument("--d", type=int)
    s.add_argument("--start", help="distance along the first axis, or a comma-separated site")
    s.add_argument("--trials", type=float, help="number of trials (batch, probe) or root-trial budget")
    s.add_argument("--target-hits", type=int)
    s.add_argument("--t-max", type=int)
    s.add_argument("--walk", choices=("lazy", "simple"))
    s.add_argument("--offspring", choices=("binary", "geometric", "custom"))
    s.add_argument("--offspring-probs")
    s.add_argument("--prune-slack", type=float)
    s.add_argument("--target-radius", type=float)
    s.add_argument("--levels", help="splitting radii, decreasing, ending at 0")
    s.add_argument("--clones", type=int)

    a = sub.add_parser("analyze", help="exponential fit of a stored conditioned sample")
    common(a)
    a.add_argument("--seed", type=int)
    a.add_argument("--run", help="simulate run directory to analyse")
    a.add_argument("--normalize", choices=("log", "none"))
    a.add_argument("--n-boot", type=int)

    q = sub.add_parser("suite", help="run the acceptance battery")
    common(q)
    q.add_argument("--seed", type=int)
    q.add_argument("--workers", type=int)
    q.add_argument("--quick", action="store_true", default=None)
    q.add_argument("--only", help="comma-separated criterion numbers")
    return p


# execution settings stay out of the snapshot so outputs do not depend on them
_SKIP = {"kind", "config", "out", "force", "workers"}


def make_config(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config, args.kind) if args.config else ExperimentConfig(args.kind)
    flags = {k.replace("_", "-"): v for k, v in vars(args).items() if k not in _SKIP}
    cfg = base.merged(flags)
    if args.kind in STOCHASTIC and cfg.get("seed", int) is None:
        raise UsageError(f"--seed is required for {args.kind}")
    return cfg


def run_directory(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    tag = hashlib.sha256(cfg.to_text().encode()).hexdigest()[:10]
    return output_root() / f"{cfg.kind}-{tag}"


def _json_writer(obj):
    def write(path):
        path.write_text(json.dumps(obj, indent=2, default=_default) + "\n")
    return write


def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


# ------------------------------------------------------------------ commands

def cmd_hitting(cfg, out, force, workers=None):
    d = cfg.get("d", int, 4)
    eps_list = cfg.get_floats("eps", [1e-3])
    r_max = cfg.get("r-max", float, 1e3)
    probes = cfg.get_floats("probe", [])
    n_points = cfg.get("points", int, 2000)
    P = DimensionParams(d)
    sols, report, writers = [], {"d": d, "solutions": []}, {}
    for e in eps_list:
        sol = hitting.solve_radial(P, e, r_max, n_points)
        sols.append(sol)
        entry = {**sol.metadata(), "probes": {}}
        for r in probes:
            row = {"u": sol.u(r)}
            if d <= 3:
                row["exact_point_hitting"] = hitting.exact_point_hitting(P, r)
            if d == 4 and e < r < r_max / 10:
                row["iscoe_ratio"] = hitting.iscoe_ratio(sol, r)
            entry["probes"][repr(r)] = row
            extra = "".join(f"  {k}={v:.6g}" for k, v in row.items() if k != "u")
            print(f"d={d} eps={e:g}: u({r:g}) = {row['u']:.6g}{extra}")
        if d >= 5 and math.isclose(e, 1.0):
            k = hitting.estimate_kappa(sol)
            entry["kappa"] = {"kappa": k.kappa, "fit_residual": k.fit_residual, "window": k.window}
            print(f"kappa_{d} = {k.kappa:.6g} (fit residual {k.fit_residual:.2e})")
        report["solutions"].append(entry)
        writers[f"hitting_d{d}_eps{e:g}.csv"] = _csv_writer(sol.to_rows(), "r,u")
    writers["hitting.json"] = _json_writer(report)
    ref = None
    if d <= 3:
        rr = np.geomspace(max(eps_list) * 2, r_max, 50)
        ref = (rr, (8 - 2 * d) / 2 * rr**-2.0)
    writers["hitting.png"] = lambda p: figures.plot_hitting(p, sols, ref)
    return persist_run(cfg, writers, out, force=force), True


def _csv_writer(rows, header):
    def write(path):
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
    return write


def cmd_moments(cfg, out, force, workers=None):
    d = cfg.get("d", int, 4)
    eps = cfg.get("eps", float, 1e-3)
    p_max = cfg.get("p-max", int, 3)
    queries = cfg.get_floats("s", [1.0])
    profile = cfg.get("profile", str, "indicator")
    per_decade = cfg.get("per-decade", int, 512)
    P = DimensionParams(d)
    spec = moments.TestFunctionSpec(d, eps, profile)
    grid = moments.RadialGrid.build(eps, max(queries + [eps]), per_decade)
    tabs = moments.build_tables(P, spec, grid, p_max)
    meta = moments.tables_metadata(tabs)
    meta["queries"] = {}
    for s in queries:
        row = {f"M_{t.p}": t.value_at(s) for t in tabs}
        if d == 4 and s > eps:
            row.update({f"ratio_{t.p}": moments.d4_asymptotic_ratio(t, s) for t in tabs})
        meta["queries"][repr(s)] = row
        print(f"s={s:g}: " + "  ".join(f"{k}={v:.6g}" for k, v in row.items()))
    if d >= 5:
        tc = moments.tech_constants(P, p_max)
        meta["constants"] = {"a_d": tc.a_d, "C": tc.C, "K_d": tc.K_d}
        print(f"a_{d} = {tc.a_d:.6g}, K_{d} = {tc.K_d:.6g}")
        if math.isclose(eps, 1.0):
            kappa = cfg.get("kappa", float)
            if kappa is None:
                kappa = hitting.estimate_kappa(hitting.solve_radial(P, 1.0, 1e4)).kappa
            lim = moments.highdim_limit_moments(tabs, kappa, spec)
            meta["limit_moments"] = {"kappa": kappa, "m": lim.m, "truncation": lim.truncation}
            print("m_p = " + ", ".join(f"{v:.6g}" for v in lim.m))
    writers = {"moments.csv": lambda p: moments.tables_to_csv(tabs, p),
               "moments.json": _json_writer(meta),
               "moments.png": lambda p: figures.plot_moments(p, tabs)}
    return persist_run(cfg, writers, out, force=force), True


def _trial_config(cfg) -> simulate.TrialConfig:
    kv = {"d": cfg.get("d", str, "4"), "start": cfg.get("start", str, "8")}
    for flag, key in (("t-max", "t_max"), ("walk", "walk"), ("offspring", "offspring"),
                      ("offspring-probs", "offspring_probs"), ("prune-slack", "prune_slack"),
                      ("target-radius", "target_radius")):
        v = cfg.get(flag, str)
        if v is not None:
            kv[key] = v
    return simulate.TrialConfig.from_mapping(kv)


def _workers(args):
    n = getattr(args, "workers", None)
    if n is not None and n < 1:
        raise UsageError("--workers must be >= 1")
    return n or env_workers()


def cmd_simulate(cfg, out, force, workers):
    tc = _trial_config(cfg)
    seed = cfg.get("seed", int)
    mode = cfg.get("mode", str, "batch")
    trials = int(cfg.get("trials", float, 1e5))
    writers = {"trial_config.txt": lambda p: p.write_text(tc.to_text())}
    if mode == "batch":
        res = simulate.run_batch(tc, trials, seed, workers)
        summary = {"config": tc.to_dict(), **res.summary()}
        writers["outcomes.csv"] = lambda p: res.to_csv(p)
        sample, weights = res.conditioned_visits(), None
    elif mode == "conditioned":
        levels = cfg.get_floats("levels")
        schedule = simulate.SplittingSchedule(tuple(levels), cfg.get("clones", int, 2)) if levels else None
        cs = simulate.conditioned_sample(tc, cfg.get("target-hits", int, 1000), trials, seed, schedule, workers)
        summary = {"config": tc.to_dict(), **cs.summary()}
        writers["sample.csv"] = lambda p: cs.to_csv(p)
        sample, weights = cs.visits, cs.weights
    elif mode == "probe":
        pr = simulate.poisson_decomposition_probe(tc, trials, seed, workers)
        summary = {"config": tc.to_dict(), "estimate": pr.estimate, "ci": list(pr.ci), "n_single": pr.n_single,
                   "n_hit": pr.n_hit, "n_trials": pr.n_trials, "hit_rate": pr.hit_rate}
        sample, weights = None, None
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    writers["summary.json"] = _json_writer(summary)
    if sample is not None:
        writers["visits.png"] = lambda p: figures.plot_visits(p, sample, weights)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, default=_default))
    return persist_run(cfg, writers, out, seed=seed, force=force), True


def cmd_analyze(cfg, out, force, workers=None):
    run = cfg.get("run", str)
    if not run:
        raise UsageError("--run is required for analyze")
    verify_run(run)
    seed = cfg.get("seed", int)
    run = Path(run)
    if (run / "sample.csv").exists():
        data = np.loadtxt(run / "sample.csv", delimiter=",", skiprows=1, ndmin=2)
        x, w = data[:, 0], data[:, 1]
    elif (run / "outcomes.csv").exists():
        with open(run / "outcomes.csv") as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(run / "outcomes.csv", delimiter=",", skiprows=1, ndmin=2)
        keep = data[:, header.index("truncated")] == 0
        x, w = data[keep, header.index("visits")], None
    else:
        raise ConfigurationError(f"{run} holds no visit sample")
    tc = simulate.TrialConfig.from_text((run / "trial_config.txt").read_text())
    scale = math.log(tc.start_distance) if cfg.get("normalize", str, "log") == "log" and tc.start_distance > 1 else 1.0
    x = x / scale
    fit = stats.exp_fit(x, w, n_boot=cfg.get("n-boot", int, 2000), seed=seed)
    report = {"source": str(run), "scale": scale, **fit.to_dict()}
    print(json.dumps({k: v for k, v in report.items() if k != "moment_ratios"}, default=_default))
    table = stats.cdf_table(x, w, fit.fitted_mean)
    writers = {"fit.json": _json_writer(report),
               "cdf.csv": _csv_writer(table, "value,empirical_cdf,fitted_cdf"),
               "cdf.png": lambda p: figures.plot_cdf(p, table)}
    return persist_run(cfg, writers, out, seed=seed, force=force), True


def cmd_suite(cfg, out, force, workers):
    only = [int(v) for v in cfg.get("only", list, [])] or None
    settings = SuiteSettings(seed=cfg.get("seed", int), quick=cfg.get("quick", bool, False), workers=workers)
    results = run_suite(settings, only)
    verdict = verdict_dict(results, settings)
    lines = "\n".join(r.line() for r in results) + "\n"
    writers = {"verdict.json": _json_writer(verdict), "suite.txt": lambda p: p.write_text(lines),
               "verdicts.png": lambda p: figures.plot_verdicts(p, verdict["criteria"])}
    record = persist_run(cfg, writers, out, seed=settings.seed, force=force)
    return record, verdict["all_passed"]


COMMANDS = {"hitting": cmd_hitting, "moments": cmd_moments, "simulate": cmd_simulate,
            "analyze": cmd_analyze, "suite": cmd_suite}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = make_config(args)
        out = run_directory(args, cfg)
        if out.exists() and not args.force:
            raise RunExistsError(f"{out} exists; pass --force to overwrite")
        record, passed = COMMANDS[args.kind](cfg, out, args.force, _workers(args))
    except (UsageError, ConfigurationError, RunExistsError) as exc:
        print(f"sbmocc {args.kind}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, NumericError, ChecksumError, OSError, ValueError) as exc:
        print(f"sbmocc {args.kind}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"run written to {record.directory}")
    return EXIT_OK if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
