"""Command line entry point: ``hoplab <experiment> --config run.yaml --out DIR``.

Every experiment writes ``summary.json`` (inputs, versions, metrics) and one
or more CSV tables.  CSV bodies depend only on the config, so two runs of
the same config produce identical tables; the wall-clock timestamp lives in
``summary.json`` under ``meta`` only.

Exit status: 0 on success, 2 on a config/schema error (the offending field
is named), 1 on a runtime failure (the failing module is named).  Errors are
also printed to stderr as one JSON record.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import platform
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__, catalog
from .config import EXPERIMENTS, ConfigError, RunConfig, load_config
from .effective import effective_matrix, effective_matrix_from_generator, reference_effective_matrix
from .environment import estimate_intensity, save_configuration
from .exclusion import (bernoulli_state, build_clock_schedule, duality_check, hydrodynamic_experiment,
                        percolation_components, slice_criterion, suggest_t0)
from .experiments import homogenize_experiment, msd_experiment, semigroup_experiment
from .microscale import build_generator
from .rates import assumption_diagnostics

log = logging.getLogger("hoplab")

THREADS_ENV = "HOPLAB_THREADS"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return Path(path).name


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _reference_D(cfg: RunConfig):
    r = cfg.reference
    log.info("reference effective matrix: %d samples, L=%g", r.samples, r.L)
    return reference_effective_matrix(cfg.environment, cfg.kernel, r.L, r.samples, r.seed,
                                      cfg.lambda_reg, cfg.cg_tol, cfg.rank_tol)


def run_sample(cfg, out, mapper):
    rows = []
    for s in cfg.seeds:
        sample = cfg.environment.sample(cfg.L, s)
        save_configuration(sample, out / f"sample_seed{s}.tsv")
        rows.append((s, sample.n_points, estimate_intensity(sample)))
    files = [write_csv(out / "samples.csv", ["seed", "n_points", "intensity"], rows)]
    files += [f"sample_seed{s}.tsv" for s in cfg.seeds]
    return {"mean_intensity": float(np.mean([r[2] for r in rows]))}, files


def run_diagnostics(cfg, out, mapper):
    reports = list(mapper(lambda s: assumption_diagnostics(cfg.environment.sample(cfg.L, s), cfg.kernel), cfg.seeds))
    header = ["seed", "n_points", "n_edges", "lambda0_mean", "lambda0_sq_mean", "lambda1_sq_mean",
              "lambda2_mean", "fstar_mean", "connected", "n_components", "symmetry_ok"]
    rows = [(s, r.n_points, r.n_edges, r.lambda0_mean, r.lambda0_sq_mean, r.lambda1_sq_mean, r.lambda2_mean,
             r.fstar_mean, r.connected, r.n_components, r.symmetry_ok) for s, r in zip(cfg.seeds, reports)]
    metrics = {str(s): r.to_dict() for s, r in zip(cfg.seeds, reports)}
    return metrics, [write_csv(out / "diagnostics.csv", header, rows)]


def run_effective_d(cfg, out, mapper):
    def one(s):
        return effective_matrix(cfg.environment.sample(cfg.L, s), cfg.kernel, cfg.lambda_reg, cfg.cg_tol, cfg.rank_tol)

    effs = list(mapper(one, cfg.seeds))
    d = cfg.environment.d
    header = ["seed", "n_points", "d_star"] + [f"D_{a + 1}{b + 1}" for a in range(d) for b in range(d)] \
        + [f"eig_{k + 1}" for k in range(d)]
    rows = [(s, e.n_points, e.d_star, *e.D.ravel(), *e.eigenvalues) for s, e in zip(cfg.seeds, effs)]
    mean = np.mean([e.D for e in effs], axis=0)
    metrics = {"mean_D": mean.tolist(), "seeds": list(cfg.seeds), "L": cfg.L,
               "per_seed": {str(s): e.to_dict() for s, e in zip(cfg.seeds, effs)}}
    return metrics, [write_csv(out / "effective_d.csv", header, rows)]


def run_homogenize(cfg, out, mapper):
    D = _reference_D(cfg)
    records, summary = homogenize_experiment(cfg.environment, cfg.kernel, D, cfg.f, cfg.phis, cfg.lam,
                                             cfg.eps_list, cfg.seeds, cfg.box, cfg.grid, cfg.cg_tol, mapper)
    header = ["eps", "seed", "n_nodes", "strong", "weak", "energy", "flow"]
    rows = [tuple(r[k] for k in header) for r in records]
    per_phi = [(r["eps"], r["seed"], p, r["weak_by_phi"][p], r["flow_by_phi"][p]) for r in records
               for p in sorted(r["weak_by_phi"])]
    files = [write_csv(out / "homogenize.csv", header, rows),
             write_csv(out / "homogenize_phi.csv", ["eps", "seed", "phi_id", "weak", "flow"], per_phi)]
    return {"D": D.D.tolist(), "median_by_eps": summary}, files


def run_semigroup(cfg, out, mapper):
    D = _reference_D(cfg)
    records, summary = semigroup_experiment(cfg.environment, cfg.kernel, D, cfg.f, cfg.t, cfg.eps_list,
                                            cfg.seeds, cfg.box, cfg.grid, mapper)
    header = ["eps", "seed", "n_nodes", "l2", "l1"]
    rows = [tuple(r[k] for k in header) for r in records]
    return {"D": D.D.tolist(), "median_by_eps": summary}, [write_csv(out / "semigroup.csv", header, rows)]


def run_msd(cfg, out, mapper):
    d = cfg.environment.d

    def one(s):
        gen, curve, slope = msd_experiment(cfg.environment, cfg.kernel, cfg.L, cfg.T, cfg.n_starts,
                                           cfg.n_samples, s, cfg.n_checkpoints)
        eff = effective_matrix_from_generator(gen, cfg.lambda_reg, cfg.cg_tol, cfg.rank_tol)
        return curve, slope, eff

    results = list(mapper(one, cfg.seeds))
    rows, metrics = [], {}
    for s, (curve, slope, eff) in zip(cfg.seeds, results):
        rows += [(s, t, v, e) for t, v, e in zip(curve["t"], curve["msd"], curve["stderr"])]
        metrics[str(s)] = {"slope_per_2d": slope / (2 * d), "corrector_trace_per_d": float(np.trace(eff.D) / d)}
    return metrics, [write_csv(out / "msd.csv", ["seed", "t", "value", "stderr"], rows)]


def run_exclusion(cfg, out, mapper):
    if cfg.kernel.kind == "conductance_table":
        log.warning("the integrable radial bound on the rates is not verified for conductance tables")
    D = _reference_D(cfg)
    env = cfg.environment
    t0 = cfg.t0 if cfg.t0 is not None else suggest_t0(env.point_density, cfg.kernel, env.d)
    report = hydrodynamic_experiment(env, cfg.kernel, cfg.rho0, cfg.t, cfg.eps_list, cfg.phis, len(cfg.seeds),
                                     cfg.seeds[0], cfg.box, D, max(cfg.grid, 256))
    files = []
    for eps in report.eps_list:
        rows = []
        for p in cfg.phis:
            pid = catalog.get(p).id
            sel = [r for r in report.rows(eps) if r.phi_id == pid]
            gaps = np.array([r.gap for r in sel])
            se = gaps.std(ddof=1) / np.sqrt(gaps.size) if gaps.size > 1 else float("nan")
            rows.append((pid, np.mean([r.empirical for r in sel]), sel[0].macro, gaps.mean(), se))
        files.append(write_csv(out / f"exclusion_eps{eps:g}.csv", ["phi_id", "empirical", "macro", "gap", "stderr"],
                               rows))
    sample = env.sample(cfg.L, cfg.seeds[0])
    hist = percolation_components(build_clock_schedule(sample, cfg.kernel, t0, t0, cfg.seeds[0]), 0)
    metrics = {
        "D": report.D.tolist(),
        "gap_by_eps": report.summary,
        "percolation": {"t0": t0, "criterion": slice_criterion(env.point_density, cfg.kernel, env.d, t0),
                        "L": cfg.L, "max_component": hist.max_size, "histogram": hist.histogram},
    }
    return metrics, files


def run_duality(cfg, out, mapper):
    s = cfg.seeds[0]
    gen = build_generator(cfg.environment.sample(cfg.L, s), cfg.kernel, 1.0)
    state0 = bernoulli_state(np.random.default_rng([s, 6]), np.full(gen.n_nodes, 0.5))
    rep = duality_check(gen, state0, cfg.t, cfg.n_schedules, s)
    rows = [(x, rep.mean[x], rep.predicted[x], rep.stderr[x], rep.residuals[x]) for x in range(gen.n_nodes)]
    files = [write_csv(out / "duality.csv", ["node", "mc_mean", "predicted", "stderr", "residual"], rows)]
    return {"max_residual": rep.max_residual, "n_nodes": gen.n_nodes, "n_schedules": rep.n_schedules}, files


RUNNERS = {
    "sample": run_sample,
    "diagnostics": run_diagnostics,
    "effective-d": run_effective_d,
    "homogenize": run_homogenize,
    "semigroup": run_semigroup,
    "msd": run_msd,
    "exclusion": run_exclusion,
    "duality": run_duality,
}

# module that owns each experiment, for error records
OWNER = {
    "sample": "environment", "diagnostics": "rates", "effective-d": "effective", "homogenize": "macroscale",
    "semigroup": "walkers", "msd": "walkers", "exclusion": "exclusion", "duality": "exclusion",
}


def derived_defaults(cfg: RunConfig):
    env, k = cfg.environment, cfg.kernel
    t0 = cfg.t0 if cfg.t0 is not None else suggest_t0(env.point_density, k, env.d)
    ids = {"f": cfg.f, "rho0": cfg.rho0, **{f"phis[{i}]": p for i, p in enumerate(cfg.phis)}}
    return {
        "R_cut": k.cutoff,
        "R_cut_effective": {"L": k.effective_cutoff(cfg.L),
                            **{f"eps={e:g}": k.effective_cutoff(cfg.box / e) for e in cfg.eps_list}},
        "microscopic_L_by_eps": {f"{e:g}": cfg.box / e for e in cfg.eps_list},
        "t0": t0,
        "t0_suggested": cfg.t0 is None,
        "slice_criterion": slice_criterion(env.point_density, k, env.d, t0),
        "grid_h": cfg.box / cfg.grid,
        "catalog": {name: catalog.describe(fid) for name, fid in ids.items()},
    }


def validate(cfg: RunConfig):
    return {"config": cfg.to_dict(), "derived": derived_defaults(cfg)}


def _versions():
    return {"hoplab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _failing_module(exc):
    mod = None
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("hoplab.") and name != "hoplab.cli":
            mod = name.split(".", 1)[1]
    return mod


def _threads(arg):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(THREADS_ENV, f"expected an integer, got {env!r}") from None
    return max(1, arg or 1)


def execute(experiment, cfg: RunConfig, out: Path, threads: int = 1):
    out.mkdir(parents=True, exist_ok=True)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    mapper = pool.map if pool else map
    try:
        metrics, files = RUNNERS[experiment](cfg, out, mapper)
    finally:
        if pool:
            pool.shutdown()
    summary = {
        "experiment": experiment,
        "inputs": cfg.to_dict(),
        "derived": derived_defaults(cfg),
        "metrics": metrics,
        "outputs": files,
        "versions": _versions(),
        "meta": {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(), "threads": threads},
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return summary


def build_parser():
    parser = argparse.ArgumentParser(prog="hoplab", description="Hopping-dynamics homogenisation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate") + EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        if name != "validate":
            p.add_argument("--out", help="output directory (default: config 'output' or ./results)")
            p.add_argument("--threads", type=int, default=None,
                           help=f"worker threads over seeds and eps (env {THREADS_ENV} overrides)")
    return parser


def _fail(code, record, out=None):
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(json.dumps(_jsonable(validate(cfg)), indent=2, sort_keys=True))
            return 0
        experiment = cfg.experiment if args.command == "run" else args.command
        if experiment is None:
            raise ConfigError("experiment", "required when using the 'run' command")
        threads = _threads(args.threads)
        out = Path(args.out or cfg.output or "results")
    except ConfigError as err:
        return _fail(2, {"error": "config", "field": err.field, "message": str(err)})
    try:
        execute(experiment, cfg, out, threads)
    except Exception as err:  # noqa: BLE001 - reported as a machine-readable record
        module = _failing_module(err) or OWNER[experiment]
        log.debug("failure", exc_info=True)
        return _fail(1, {"error": "runtime", "module": module, "type": type(err).__name__, "message": str(err)},
                     out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
