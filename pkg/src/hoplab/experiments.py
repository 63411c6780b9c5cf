"""Multi-seed experiment pipelines shared by the command line and the test suite.

Each pipeline samples the environment for seed ``s`` at the ``k``-th eps
with ``derive_seed(s, k)`` and returns plain records plus a per-eps summary (median over
seeds), so that callers can tabulate or assert on them directly.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .catalog import get as get_function
from .effective import EffectiveMatrix
from .environment import EnvironmentSpec, derive_seed
from .exclusion import build_clock_schedule, percolation_components, suggest_t0
from .macroscale import compare_micro_macro, grid_field, heat_semigroup, interpolate, solve_effective_resolvent
from .microscale import build_generator, l2_mu, solve_resolvent
from .rates import RateKernel
from .walkers import msd, msd_slope, semigroup

log = logging.getLogger(__name__)


def _fn(x):
    return get_function(x) if isinstance(x, str) else x


def _jobs(eps_list, seeds):
    return [(k, float(eps), int(s)) for k, eps in enumerate(eps_list) for s in seeds]


def _median_by_eps(records, key, eps_list):
    out = {}
    for eps in eps_list:
        vals = np.array([key(r) for r in records if r["eps"] == float(eps)])
        out[float(eps)] = float(np.median(vals)) if vals.size else float("nan")
    return out


def homogenize_experiment(spec: EnvironmentSpec, kernel: RateKernel, D: EffectiveMatrix, f, phis, lam: float,
                          eps_list, seeds, box: float, n_grid: int = 128, tol: float = 1e-10, mapper=map):
    """Resolvent comparison (strong, weak, energy, flow gaps) over an eps ladder.

    ``weak`` and ``flow`` are averaged over the test functions before the
    median over seeds is taken.  ``mapper`` must preserve order.
    """
    f = _fn(f)
    phis = [_fn(p) for p in phis]
    u = solve_effective_resolvent(D, lam, grid_field(f, box, n_grid, spec.d), tol)

    def task(job):
        k, eps, s = job
        cfg = spec.sample(box / eps, derive_seed(s, k))
        gen = build_generator(cfg, kernel, eps)
        u_eps = solve_resolvent(gen, lam, f(gen.positions, box), tol)
        r = compare_micro_macro(gen, u_eps, u, D, phis)
        return {
            "eps": float(eps), "seed": int(s), "n_nodes": gen.n_nodes,
            "strong": r["strong"],
            "weak": float(np.mean(list(r["weak"].values()))) if phis else 0.0,
            "energy": r["energy"],
            "flow": float(np.mean(list(r["flow"].values()))) if phis else 0.0,
            "energy_micro": r["energy_micro"], "energy_macro": r["energy_macro"],
            "weak_by_phi": r["weak"], "flow_by_phi": r["flow"],
        }

    records = list(mapper(task, _jobs(eps_list, seeds)))
    log.info("homogenize: %d runs", len(records))
    summary = {m: _median_by_eps(records, lambda r, m=m: r[m], eps_list)
               for m in ("strong", "weak", "energy", "flow")}
    return records, summary


def semigroup_experiment(spec: EnvironmentSpec, kernel: RateKernel, D: EffectiveMatrix, f, t: float,
                         eps_list, seeds, box: float, n_grid: int = 128, mapper=map):
    """L2 (relative) and L1 gaps between the microscopic and the effective heat semigroup."""
    f = _fn(f)
    target = heat_semigroup(D, t, grid_field(f, box, n_grid, spec.d))

    def task(job):
        k, eps, s = job
        cfg = spec.sample(box / eps, derive_seed(s, k))
        gen = build_generator(cfg, kernel, eps)
        micro = semigroup(gen, t, f(gen.positions, box))
        macro = interpolate(target, gen.positions)
        diff = micro - macro
        return {
            "eps": float(eps), "seed": int(s), "n_nodes": gen.n_nodes,
            "l2": float(np.sqrt(l2_mu(gen, diff) / l2_mu(gen, macro))),
            "l1": float(gen.mu_weight * np.abs(diff).sum()),
        }

    records = list(mapper(task, _jobs(eps_list, seeds)))
    log.info("semigroup: %d runs", len(records))
    summary = {m: _median_by_eps(records, lambda r, m=m: r[m], eps_list) for m in ("l2", "l1")}
    return records, summary


def msd_experiment(spec: EnvironmentSpec, kernel: RateKernel, L: float, T: float, n_starts: int,
                   n_samples: int, seed: int, n_checkpoints: int = 10):
    """MSD curve on one sample (eps = 1) from ``n_starts`` random start nodes."""
    cfg = spec.sample(L, derive_seed(seed, 0))
    gen = build_generator(cfg, kernel, 1.0)
    rng = np.random.default_rng([int(seed), 5])
    starts = rng.choice(gen.n_nodes, size=min(n_starts, gen.n_nodes), replace=False)
    curve = msd(gen, starts, T, n_samples, seed, n_checkpoints)
    return gen, curve, msd_slope(curve)


@dataclass
class PercolationRecord:
    L: float
    seed: int
    n_points: int
    max_size: int
    mean_size: float


def percolation_experiment(spec: EnvironmentSpec, kernel: RateKernel, L_list, n_seeds: int, seed: int,
                           t0: float | None = None, C1: float = 1.0):
    """Largest slice cluster (slice 0) for each box side, ``n_seeds`` samples each."""
    t0 = suggest_t0(spec.point_density, kernel, spec.d, C1) if t0 is None else t0
    records = []
    for k, L in enumerate(L_list):
        for s in range(n_seeds):
            sd = derive_seed(seed, k, s)
            cfg = spec.sample(L, sd)
            sched = build_clock_schedule(cfg, kernel, t0, t0, sd)
            hist = percolation_components(sched, 0)
            records.append(PercolationRecord(float(L), s, cfg.n_points, hist.max_size,
                                             float(hist.sizes.mean()) if hist.sizes.size else 0.0))
    medians = {float(L): float(np.median([r.max_size for r in records if r.L == float(L)])) for L in L_list}
    return t0, [asdict(r) for r in records], medians
