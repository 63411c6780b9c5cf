"""Continuous-time random walk on ``eps * omega_hat`` and its semigroup.

The walk jumps from ``eps y`` to ``eps z`` at rate ``eps^-2 c_{y,z}``.  Walks
are simulated with the Gillespie scheme, vectorised over replicas: one
exponential holding time per step, next site drawn from the row of the
conductance matrix by inverse-CDF lookup in a global cumulative table.

Seed streams: a replica batch started at node ``x`` with root seed ``s``
draws from ``default_rng([s, 0, x])``; ensembles with mixed starts draw
from ``default_rng([s, 1])``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import ive

from .microscale import Generator, l2_mu

EXACT_MAX_NODES = 2000


def node_stream(seed, node):
    return np.random.default_rng([int(seed), 0, int(node)])


def ensemble_stream(seed):
    return np.random.default_rng([int(seed), 1])


@dataclass(frozen=True)
class WalkTrajectory:
    start: int
    times: np.ndarray
    nodes: np.ndarray
    T: float
    seed: int

    def position_at(self, t):
        """Node occupied at time ``t`` (right-continuous)."""
        k = np.searchsorted(self.times, t, side="right")
        return int(self.start if k == 0 else self.nodes[k - 1])

    def holding_times(self):
        """Completed sojourns as ``(node, duration)`` arrays."""
        t = np.concatenate([[0.0], self.times])
        visited = np.concatenate([[self.start], self.nodes[:-1]]) if self.nodes.size else np.zeros(0, int)
        return visited, np.diff(t)


class JumpTable:
    """Directed-edge layout of a generator for fast jump selection."""

    def __init__(self, gen: Generator):
        C = gen.conductance.tocsr()
        C.sort_indices()
        self.indptr = C.indptr
        self.target = C.indices
        self.cum = np.cumsum(C.data)
        start = np.concatenate([[0.0], self.cum])[self.indptr[:-1]]
        end = np.concatenate([[0.0], self.cum])[self.indptr[1:]]
        self.row_start = start
        self.row_total = end - start
        self.rate_out = self.row_total / gen.eps ** 2
        # displacement of each directed entry in macroscopic units
        n = gen.n_nodes
        key_src = np.concatenate([gen.i, gen.j])
        key_dst = np.concatenate([gen.j, gen.i])
        disp = np.concatenate([gen.disp, -gen.disp]) * gen.eps
        order = np.lexsort((key_dst, key_src))
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        if not (np.array_equal(key_src[order], rows) and np.array_equal(key_dst[order], self.target)):
            raise ValueError("generator edge list is inconsistent with its conductance matrix")
        self.disp = disp[order]

    def choose(self, nodes, u):
        """Directed-edge index for each walker given uniforms ``u`` in [0, 1)."""
        target = self.row_start[nodes] + u * self.row_total[nodes]
        k = np.searchsorted(self.cum, target, side="right")
        return np.clip(k, self.indptr[nodes], self.indptr[nodes + 1] - 1)


def simulate_walk(gen: Generator, start: int, T: float, seed: int, table: JumpTable | None = None) -> WalkTrajectory:
    """One Gillespie trajectory on ``[0, T]``."""
    if not 0 <= start < gen.n_nodes:
        raise IndexError(f"start node {start} out of range")
    table = JumpTable(gen) if table is None else table
    rng = node_stream(seed, start)
    t, node = 0.0, start
    times, nodes = [], []
    while True:
        rate = table.rate_out[node]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        k = table.choose(np.array([node]), np.array([rng.random()]))[0]
        node = int(table.target[k])
        times.append(t)
        nodes.append(node)
    return WalkTrajectory(start, np.array(times), np.array(nodes, dtype=np.int64), float(T), seed)


def simulate_ensemble(gen: Generator, starts, checkpoints, rng, table: JumpTable | None = None):
    """Vectorised walks from ``starts``, observed at sorted ``checkpoints``.

    Returns ``(nodes, displacement)`` of shapes ``(R, K)`` and ``(R, K, d)``;
    displacements are unwrapped across the periodic seam, in macroscopic units.
    """
    table = JumpTable(gen) if table is None else table
    starts = np.asarray(starts, dtype=np.int64)
    chk = np.asarray(checkpoints, dtype=float)
    if np.any(np.diff(chk) < 0) or (chk.size and chk[0] < 0):
        raise ValueError("checkpoints must be nonnegative and sorted")
    R, K, d = starts.size, chk.size, gen.d
    out_nodes = np.empty((R, K), dtype=np.int64)
    out_disp = np.zeros((R, K, d))
    node = starts.copy()
    time = np.zeros(R)
    disp = np.zeros((R, d))
    nxt = np.zeros(R, dtype=np.int64)
    active = np.arange(R)
    while active.size:
        a = active
        rate = table.rate_out[node[a]]
        with np.errstate(divide="ignore"):
            hold = np.where(rate > 0, rng.exponential(1.0, a.size) / np.where(rate > 0, rate, 1.0), np.inf)
        new_time = time[a] + hold
        # record every checkpoint that falls before the next jump
        pending = a[nxt[a] < K]
        nt = new_time[nxt[a] < K]
        while pending.size:
            hit = chk[nxt[pending]] < nt
            pending, nt = pending[hit], nt[hit]
            if not pending.size:
                break
            out_nodes[pending, nxt[pending]] = node[pending]
            out_disp[pending, nxt[pending]] = disp[pending]
            nxt[pending] += 1
            keep = nxt[pending] < K
            pending, nt = pending[keep], nt[keep]
        go = nxt[a] < K
        a, new_time = a[go], new_time[go]
        if a.size:
            k = table.choose(node[a], rng.random(a.size))
            disp[a] += table.disp[k]
            node[a] = table.target[k]
            time[a] = new_time
        active = a
    return out_nodes, out_disp


def semigroup_mc(gen: Generator, t: float, f, n_samples: int, seed: int):
    """Monte Carlo ``E_x f(X_t)`` at every node, with standard errors."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy(), np.zeros_like(f)
    table = JumpTable(gen)
    est = np.empty(gen.n_nodes)
    err = np.empty(gen.n_nodes)
    for x in range(gen.n_nodes):
        rng = node_stream(seed, x)
        nodes, _ = simulate_ensemble(gen, np.full(n_samples, x), [t], rng, table)
        vals = f[nodes[:, 0]]
        est[x] = vals.mean()
        err[x] = vals.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else np.inf
    return est, err


def semigroup_exact(gen: Generator, t: float, f):
    """``exp(t L^eps) f`` from the dense matrix exponential (Pade scaling and squaring)."""
    if gen.n_nodes > EXACT_MAX_NODES:
        raise ValueError(f"dense exponential limited to {EXACT_MAX_NODES} nodes, got {gen.n_nodes}")
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    return scipy.linalg.expm(t * gen.dense()) @ f


def transition_kernel(gen: Generator, t: float):
    """Dense ``p(t, x, y)`` for small graphs."""
    if gen.n_nodes > EXACT_MAX_NODES:
        raise ValueError(f"dense exponential limited to {EXACT_MAX_NODES} nodes, got {gen.n_nodes}")
    return scipy.linalg.expm(t * gen.dense())


def semigroup_action(gen: Generator, t: float, f, tol: float = 1e-12):
    """``exp(t L^eps) f`` by a Chebyshev expansion, for graphs too large to densify.

    The spectrum of ``L^eps`` lies in ``[-rho, 0]`` with ``rho = 2 eps^-2 max deg``.
    """
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    rho = 2.0 * float(gen.degree.max(initial=0.0)) / gen.eps ** 2
    if rho == 0:
        return f.copy()
    z = 0.5 * t * rho

    def X(v):
        # maps the spectrum of L onto [-1, 1]
        return (2.0 / rho) * gen.apply(v) + v

    t_prev, t_cur = f, X(f)
    out = ive(0, z) * t_prev + 2 * ive(1, z) * t_cur
    k = 1
    fnorm = np.linalg.norm(f)
    while True:
        k += 1
        coef = 2 * ive(k, z)
        t_prev, t_cur = t_cur, 2 * X(t_cur) - t_prev
        out += coef * t_cur
        if k > z and coef * max(np.linalg.norm(t_cur), fnorm) <= tol * max(fnorm, 1e-300):
            break
    return out


def semigroup(gen: Generator, t: float, f):
    """Exact semigroup: dense exponential when small, Chebyshev otherwise."""
    if gen.n_nodes <= EXACT_MAX_NODES:
        return semigroup_exact(gen, t, f)
    return semigroup_action(gen, t, f)


def msd(gen: Generator, starts, T: float, n_samples: int, seed: int, n_checkpoints: int = 12):
    """Mean-square displacement ``E|X_t - X_0|^2`` at geometric checkpoints up to ``T``."""
    starts = np.asarray(starts, dtype=np.int64)
    chk = np.geomspace(T / 2 ** (n_checkpoints - 1), T, n_checkpoints) if n_checkpoints > 1 else np.array([T])
    rng = ensemble_stream(seed)
    replicas = np.repeat(starts, n_samples)
    _, disp = simulate_ensemble(gen, replicas, chk, rng)
    sq = np.sum(disp ** 2, axis=2)
    return {
        "t": chk,
        "msd": sq.mean(axis=0),
        "stderr": sq.std(axis=0, ddof=1) / np.sqrt(sq.shape[0]),
    }


def msd_slope(curve, tail=0.5):
    """Least-squares slope of ``msd`` against ``t`` over the last ``tail`` fraction of checkpoints."""
    t, y = np.asarray(curve["t"]), np.asarray(curve["msd"])
    k = max(2, int(round(tail * t.size)))
    return float(np.polyfit(t[-k:], y[-k:], 1)[0])


def l2_gap(gen: Generator, a, b):
    return np.sqrt(l2_mu(gen, np.asarray(a) - np.asarray(b)))
