"""Simple exclusion process by the graphical construction.

Every unordered edge ``{x, y}`` carries an independent Poisson clock of
intensity ``c_xy``; at each ring the occupations of ``x`` and ``y`` are
exchanged.  A swap changes the state only when exactly one endpoint is
occupied, so the particle at ``x`` jumps to an empty ``y`` at rate ``c_xy``.

On a finite periodic sample the rings are processed in one global time
order.  The time-slice clusters (edges ringing in ``(r t0, (r+1) t0]``) are
kept as a percolation diagnostic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import get as get_function
from .environment import EnvironmentSpec, MarkedConfiguration, derive_seed
from .macroscale import grid_field, heat_semigroup
from .microscale import Generator, build_generator
from .rates import RateKernel, pair_table
from .unionfind import UnionFind
from .walkers import transition_kernel

log = logging.getLogger(__name__)

DUALITY_MAX_NODES = 50


@dataclass(frozen=True, eq=False)
class ClockSchedule:
    """Poisson ring times on ``[0, T]`` for every positive-rate edge.

    ``ring_time`` / ``ring_edge`` list all rings in increasing time order.
    """

    T: float
    t0: float
    seed: int
    n_nodes: int
    i: np.ndarray
    j: np.ndarray
    rate: np.ndarray
    ring_time: np.ndarray
    ring_edge: np.ndarray

    @property
    def n_edges(self):
        return self.i.shape[0]

    @property
    def n_rings(self):
        return self.ring_time.shape[0]

    @property
    def n_slices(self):
        return int(math.ceil(self.T / self.t0))

    def counts(self):
        return np.bincount(self.ring_edge, minlength=self.n_edges)

    def rings(self, edge):
        """Sorted ring times of one edge."""
        return self.ring_time[self.ring_edge == edge]

    def compensated(self, edge, t):
        """``N_e(t) - c_e t``, mean zero."""
        return float(np.sum(self.rings(edge) <= t) - self.rate[edge] * t)


def schedule_from_edges(n_nodes, i, j, rate, T, t0, seed) -> ClockSchedule:
    if not T > 0:
        raise ValueError(f"horizon T must be positive, got {T}")
    if not t0 > 0:
        raise ValueError(f"slice length t0 must be positive, got {t0}")
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    rate = np.asarray(rate, dtype=float)
    keep = rate > 0
    i, j, rate = i[keep], j[keep], rate[keep]
    rng = np.random.default_rng([int(seed), 2])
    counts = rng.poisson(rate * T)
    edge = np.repeat(np.arange(rate.shape[0]), counts)
    times = rng.uniform(0.0, T, size=edge.shape[0])
    order = np.argsort(times, kind="stable")
    return ClockSchedule(float(T), float(t0), int(seed), int(n_nodes), i, j, rate, times[order], edge[order])


def build_clock_schedule(cfg: MarkedConfiguration, kernel: RateKernel, T: float, t0: float, seed: int) -> ClockSchedule:
    """Clocks with intensity ``c_xy`` on the microscopic sample."""
    pt = pair_table(cfg, kernel)
    return schedule_from_edges(cfg.n_points, pt.i, pt.j, pt.rate, T, t0, seed)


def schedule_from_generator(gen: Generator, T: float, t0: float, seed: int) -> ClockSchedule:
    """Clocks with intensity ``eps^-2 c_xy``, i.e. the dynamics in macroscopic time."""
    return schedule_from_edges(gen.n_nodes, gen.i, gen.j, gen.rate / gen.eps ** 2, T, t0, seed)


@dataclass(frozen=True)
class ComponentHistogram:
    slice_index: int
    sizes: np.ndarray
    histogram: dict = field(default_factory=dict)

    @property
    def max_size(self):
        return int(self.sizes[0]) if self.sizes.size else 0


def percolation_components(schedule: ClockSchedule, r: int) -> ComponentHistogram:
    """Clusters of the graph whose edges ring at least once in ``(r t0, (r+1) t0]``."""
    lo = r * schedule.t0
    if r < 0 or not lo < schedule.T:
        raise ValueError(f"slice {r} starts at {lo}, beyond the horizon {schedule.T}")
    hi = lo + schedule.t0
    sel = (schedule.ring_time > lo) & (schedule.ring_time <= hi)
    edges = np.unique(schedule.ring_edge[sel])
    uf = UnionFind(schedule.n_nodes)
    for e in edges:
        uf.union(int(schedule.i[e]), int(schedule.j[e]))
    sizes = uf.component_sizes()
    values, counts = np.unique(sizes, return_counts=True)
    return ComponentHistogram(r, sizes, {int(v): int(c) for v, c in zip(values, counts)})


def slice_criterion(m: float, kernel: RateKernel, d: int, t0: float, C1: float = 1.0) -> float:
    """``m C1 t0 int g``; the slice graph has only finite clusters when this is below 1."""
    return m * C1 * t0 * kernel.bound_integral(d)


def suggest_t0(m: float, kernel: RateKernel, d: int, C1: float = 1.0, safety: float = 0.5) -> float:
    """Slice length at ``safety`` times the critical value of :func:`slice_criterion`, capped at 1."""
    integral = m * C1 * kernel.bound_integral(d)
    if integral <= 0:
        return 1.0
    return float(min(1.0, safety / integral))


@dataclass(frozen=True, eq=False)
class ExclusionState:
    occupation: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        occ = np.asarray(self.occupation)
        if occ.size and not np.all((occ == 0) | (occ == 1)):
            raise ValueError("occupations must be 0 or 1")
        occ = occ.astype(np.int8)
        occ.setflags(write=False)
        object.__setattr__(self, "occupation", occ)

    @property
    def n_particles(self):
        return int(self.occupation.sum())


def stirring_origins(schedule: ClockSchedule, obs_times):
    """Where the content of each node at each observation time came from.

    Returns an ``(n_obs, N)`` array ``origin`` with ``eta_t = eta_0[origin[k]]``.
    """
    obs = np.asarray(obs_times, dtype=float)
    if np.any(np.diff(obs) < 0):
        raise ValueError("observation times must be sorted")
    origin = list(range(schedule.n_nodes))
    out = np.empty((obs.size, schedule.n_nodes), dtype=np.int64)
    ends = np.searchsorted(schedule.ring_time, obs, side="right")
    ii = schedule.i[schedule.ring_edge].tolist()
    jj = schedule.j[schedule.ring_edge].tolist()
    pos = 0
    for k, end in enumerate(ends):
        for r in range(pos, int(end)):
            x, y = ii[r], jj[r]
            origin[x], origin[y] = origin[y], origin[x]
        pos = int(end)
        out[k] = origin
    return out


def evolve_exclusion(state: ExclusionState, schedule: ClockSchedule, horizon: float, obs_times=None):
    """States at ``obs_times`` (default: only ``horizon``), applying every ring up to that time."""
    if horizon > schedule.T * (1 + 1e-12):
        raise ValueError(f"horizon {horizon} exceeds the schedule horizon {schedule.T}")
    if state.occupation.shape[0] != schedule.n_nodes:
        raise ValueError(f"state has {state.occupation.shape[0]} sites, schedule has {schedule.n_nodes}")
    obs = np.array([horizon] if obs_times is None else obs_times, dtype=float)
    if obs.size and (obs.max() > horizon or obs.min() < state.time):
        raise ValueError("observation times must lie in [state.time, horizon]")
    origins = _origins_after(schedule, state.time, obs)
    eta0 = state.occupation
    return [ExclusionState(eta0[o], float(t)) for o, t in zip(origins, obs)]


def _origins_after(schedule, t_start, obs):
    """Stirring origins using only rings after ``t_start`` (earlier rings are already applied)."""
    if t_start == 0:
        return stirring_origins(schedule, obs)
    start = np.searchsorted(schedule.ring_time, t_start, side="right")
    sub = ClockSchedule(schedule.T, schedule.t0, schedule.seed, schedule.n_nodes, schedule.i, schedule.j,
                        schedule.rate, schedule.ring_time[start:], schedule.ring_edge[start:])
    return stirring_origins(sub, obs)


def empirical_density(state: ExclusionState, gen: Generator, phi) -> float:
    """``eps^d sum_x phi(eps x) eta_x`` on the scaled sample of ``gen``."""
    phi = get_function(phi) if isinstance(phi, str) else phi
    vals = phi(gen.positions, gen.box)
    return float(gen.mu_weight * np.dot(vals, state.occupation))


def bernoulli_state(rng, probs) -> ExclusionState:
    probs = np.asarray(probs, dtype=float)
    if np.any((probs < 0) | (probs > 1)):
        raise ValueError("occupation probabilities must lie in [0, 1]")
    return ExclusionState((rng.random(probs.shape[0]) < probs).astype(np.int8))


@dataclass
class HydroRecord:
    eps: float
    seed_index: int
    n_nodes: int
    phi_id: str
    empirical: float
    macro: float
    gap: float
    empirical_dx: float
    macro_dx: float


@dataclass
class HydroReport:
    t: float
    box: float
    D: np.ndarray
    eps_list: list
    records: list
    summary: dict

    def rows(self, eps):
        return [r for r in self.records if r.eps == eps]


def hydrodynamic_experiment(spec: EnvironmentSpec, kernel: RateKernel, rho0, t: float, eps_list, phis,
                            n_seeds: int, seed: int, box: float = 1.0, D=None, n_grid: int = 1024) -> HydroReport:
    """Empirical density pairings at time ``t`` against the heat-equation prediction.

    For every ``eps``, seed and test function ``phi``:

    * ``empirical = sum phi(eps x) eta_x(t) / sum phi(eps x)``
    * ``macro = int phi rho(t) / int phi`` with ``rho(t) = P_t rho0``
    * ``gap = |empirical - macro|``

    i.e. the pairing per unit mass of ``phi``.  The raw pairings
    ``eps^d sum phi eta`` and ``m int phi rho`` are kept as ``*_dx``.
    """
    if D is None:
        raise ValueError("an effective matrix D is required")
    rho0 = get_function(rho0) if isinstance(rho0, str) else rho0
    phis = [get_function(p) if isinstance(p, str) else p for p in phis]
    d = spec.d
    rho_t = heat_semigroup(D, t, grid_field(rho0, box, n_grid, d))
    phi_grids = [grid_field(p, box, n_grid, d) for p in phis]
    records = []
    for k, eps in enumerate(eps_list):
        L = box / eps
        for s in range(n_seeds):
            cfg = spec.sample(L, derive_seed(seed, k, s))
            gen = build_generator(cfg, kernel, eps)
            m = gen.intensity
            rng = np.random.default_rng([derive_seed(seed, k, s), 4])
            state0 = bernoulli_state(rng, rho0(gen.positions, box))
            if t > 0:
                sched = schedule_from_generator(gen, t, t, derive_seed(seed, k, s))
                state = evolve_exclusion(state0, sched, t)[0]
            else:
                state = state0
            for p, pg in zip(phis, phi_grids):
                vals = p(gen.positions, box)
                mass_micro = gen.mu_weight * vals.sum()
                emp_dx = float(gen.mu_weight * np.dot(vals, state.occupation))
                macro_dx = m * rho_t.integral(pg.values)
                mass_macro = pg.integral()
                emp = emp_dx / mass_micro if mass_micro > 0 else 0.0
                macro = macro_dx / (m * mass_macro) if mass_macro > 0 else 0.0
                records.append(HydroRecord(float(eps), s, gen.n_nodes, p.id, emp, macro, abs(emp - macro),
                                           emp_dx, macro_dx))
        log.info("hydrodynamic eps=%g done (%d seeds)", eps, n_seeds)
    summary = summarize_hydro(records, eps_list)
    Dm = np.atleast_2d(D.D if hasattr(D, "D") else np.asarray(D, dtype=float))
    return HydroReport(float(t), float(box), Dm, [float(e) for e in eps_list], records, summary)


def summarize_hydro(records, eps_list):
    """Per eps: median over seeds of the phi-averaged gap, with spread."""
    out = {}
    for eps in eps_list:
        rows = [r for r in records if r.eps == float(eps)]
        seeds = sorted({r.seed_index for r in rows})
        per_seed = np.array([np.mean([r.gap for r in rows if r.seed_index == s]) for s in seeds])
        out[float(eps)] = {
            "median_gap": float(np.median(per_seed)),
            "mean_gap": float(per_seed.mean()),
            "stderr": float(per_seed.std(ddof=1) / np.sqrt(per_seed.size)) if per_seed.size > 1 else float("nan"),
            "q25": float(np.quantile(per_seed, 0.25)),
            "q75": float(np.quantile(per_seed, 0.75)),
            "n_seeds": int(per_seed.size),
        }
    return out


@dataclass
class DualityReport:
    t: float
    n_schedules: int
    mean: np.ndarray
    predicted: np.ndarray
    stderr: np.ndarray
    residuals: np.ndarray

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0


def duality_check(gen: Generator, state0, t: float, n_schedules: int, seed: int) -> DualityReport:
    """MC mean of ``eta_x(t)`` against ``sum_y p(t, x, y) eta_y(0)``.

    The standardised residual uses the oracle variance ``p (1 - p) / n``
    of a 0/1 variable with the predicted mean.
    """
    if gen.n_nodes > DUALITY_MAX_NODES:
        raise ValueError(f"duality check limited to {DUALITY_MAX_NODES} nodes, got {gen.n_nodes}")
    if t < 0:
        raise ValueError("t must be nonnegative")
    eta0 = state0.occupation if isinstance(state0, ExclusionState) else np.asarray(state0, dtype=np.int8)
    pred = transition_kernel(gen, t) @ eta0 if t > 0 else eta0.astype(float)
    total = np.zeros(gen.n_nodes)
    if t == 0:
        total = n_schedules * eta0.astype(float)
    else:
        for k in range(n_schedules):
            sched = schedule_from_generator(gen, t, t, derive_seed(seed, k))
            total += eta0[stirring_origins(sched, [t])[0]]
    mean = total / n_schedules
    var = np.clip(pred * (1 - pred), 0.0, None) / n_schedules
    diff = mean - pred
    se = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) > 1e-12, np.inf, 0.0))
    return DualityReport(float(t), int(n_schedules), mean, pred, se, z)
