"""Rescaled generator ``L^eps`` on a sampled environment.

Factor conventions (fixed here, used everywhere):

* nodes sit at ``eps * a`` for ``a`` in the sample; ``mu^eps`` gives each node
  weight ``eps^d``;
* each unordered edge ``{i, j}`` is stored once with ``i < j``, rate ``c_ij``
  and minimum-image displacement ``z = x_j - x_i`` in microscopic units;
  ``nu^eps`` charges the ordered pairs ``(i, j)`` and ``(j, i)`` each with
  ``eps^d c_ij``, so every quadratic form over ``nu^eps`` equals twice the
  sum over stored edges;
* ``(L^eps f)(i) = eps^-2 sum_j c_ij (f_j - f_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import SolverError
from .environment import MarkedConfiguration
from .rates import RateKernel, pair_table

DEFAULT_MAXITER = 100_000


@dataclass(frozen=True, eq=False)
class Generator:
    """Sparse symmetric weighted graph realising ``L^eps`` on one sample."""

    eps: float
    d: int
    L: float
    positions: np.ndarray
    i: np.ndarray
    j: np.ndarray
    rate: np.ndarray
    disp: np.ndarray
    degree: np.ndarray
    intensity: float = 0.0
    conductance: sp.csr_matrix = field(repr=False, default=None)

    @property
    def n_nodes(self):
        return self.positions.shape[0]

    @property
    def n_edges(self):
        return self.i.shape[0]

    @property
    def box(self):
        """Side of the macroscopic torus ``eps * L``."""
        return self.eps * self.L

    @property
    def mu_weight(self):
        return self.eps ** self.d

    @property
    def nu_weight(self):
        return self.eps ** self.d * self.rate

    def apply(self, f):
        """``L^eps f`` at every node."""
        f = np.asarray(f, dtype=float)
        return (self.conductance @ f - self.degree * f) / self.eps ** 2

    def matrix(self):
        """Sparse matrix of ``L^eps``."""
        return (self.conductance - sp.diags(self.degree)) / self.eps ** 2

    def dense(self):
        return self.matrix().toarray()

    def laplacian(self):
        """Unscaled graph Laplacian ``diag(C 1) - C`` (positive semidefinite)."""
        return (sp.diags(self.degree) - self.conductance).tocsr()

    def export_edges(self, path_prefix):
        """Write ``<prefix>_edges.txt`` (``i j c_ij``) and ``<prefix>_nodes.txt``."""
        np.savetxt(f"{path_prefix}_edges.txt", np.column_stack([self.i, self.j, self.rate]),
                   fmt=["%d", "%d", "%.17g"], delimiter="\t", header="i\tj\tc_ij")
        np.savetxt(f"{path_prefix}_nodes.txt", self.positions, fmt="%.17g", delimiter="\t",
                   header=f"eps={self.eps!r} d={self.d} L={self.L!r}")


def from_edges(eps, d, L, points, i, j, rate, disp, intensity=0.0):
    """Assemble a :class:`Generator` from an explicit edge list (``i < j``)."""
    n = points.shape[0]
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    rate = np.asarray(rate, dtype=float)
    C = sp.coo_matrix((np.concatenate([rate, rate]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                      shape=(n, n)).tocsr()
    C.sum_duplicates()
    degree = np.bincount(i, rate, minlength=n) + np.bincount(j, rate, minlength=n)
    return Generator(float(eps), int(d), float(L), eps * np.asarray(points, dtype=float), i, j, rate,
                     np.asarray(disp, dtype=float).reshape(-1, d), degree, float(intensity), C)


def build_generator(cfg: MarkedConfiguration, kernel: RateKernel, eps: float) -> Generator:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if cfg.n_points == 0:
        raise ValueError("cannot build a generator on an empty configuration")
    pt = pair_table(cfg, kernel)
    m = cfg.nominal_intensity if cfg.source == "poisson" else cfg.n_points / cfg.volume
    return from_edges(eps, cfg.d, cfg.L, cfg.points, pt.i, pt.j, pt.rate, pt.disp, m)


@dataclass(frozen=True, eq=False)
class EdgeField:
    """Values on the stored orientation ``i -> j`` of every edge.

    The reversed orientation carries ``-values`` for gradients.
    """

    values: np.ndarray

    def reversed(self):
        return EdgeField(-self.values)


def micro_gradient(gen: Generator, f) -> EdgeField:
    """``(f(x + eps z) - f(x)) / eps`` on every stored edge."""
    f = np.asarray(f, dtype=float)
    return EdgeField((f[gen.j] - f[gen.i]) / gen.eps)


def dirichlet_form(gen: Generator, f, g) -> float:
    """``1/2 <grad f, grad g>_{nu^eps} = eps^(d-2) sum_edges c (f_j - f_i)(g_j - g_i)``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    return float(gen.eps ** (gen.d - 2) * np.sum(gen.rate * (f[gen.j] - f[gen.i]) * (g[gen.j] - g[gen.i])))


def l2_mu(gen: Generator, f, g=None) -> float:
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    return float(gen.mu_weight * np.dot(f, g))


def micro_norms(gen: Generator, f):
    """``(||f||^2_{L^2(mu^eps)}, 1/2 ||grad f||^2_{nu^eps})``."""
    return l2_mu(gen, f), dirichlet_form(gen, f, f)


def iteration_cap(cond=None):
    if cond is None or not math.isfinite(cond):
        return DEFAULT_MAXITER
    return int(min(DEFAULT_MAXITER, max(100, 50 * math.sqrt(cond))))


def conjugate_gradient(matvec, b, tol, maxiter=DEFAULT_MAXITER, precond=None, x0=None):
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``.  ``precond`` is the inverse
    diagonal for Jacobi preconditioning.  Returns ``(x, rel_residual,
    iterations)``; raises :class:`SolverError` on non-convergence.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, 0
    r = b - matvec(x) if x0 is not None else b.copy()
    z = r * precond if precond is not None else r
    p = z.copy()
    rz = np.dot(r, z)
    res = np.linalg.norm(r) / bnorm
    k = 0
    while res > tol:
        if k >= maxiter:
            raise SolverError(f"CG did not converge in {maxiter} iterations (residual {res:.3e})", res, k)
        Ap = matvec(p)
        pAp = np.dot(p, Ap)
        if pAp <= 0:
            raise SolverError(f"CG breakdown: nonpositive curvature {pAp:.3e}", res, k)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        k += 1
        # recompute the true residual now and then to avoid drift
        if k % 200 == 0:
            r = b - matvec(x)
        res = np.linalg.norm(r) / bnorm
        z = r * precond if precond is not None else r
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, res, k


def solve_resolvent(gen: Generator, lam: float, f, tol: float = 1e-10, jacobi: bool = False, maxiter=None):
    """Weak solution of ``lam u - L^eps u = f``.

    CG on ``lam I + eps^-2 (diag(C 1) - C)``; the relative residual
    ``||lam u - L u - f|| / ||f||`` is at most ``tol`` on return.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    f = np.asarray(f, dtype=float)
    s = gen.eps ** -2
    C, deg = gen.conductance, gen.degree

    def matvec(v):
        return lam * v + s * (deg * v - C @ v)

    cond = (lam + 2 * s * float(deg.max(initial=0.0))) / lam
    precond = 1.0 / (lam + s * deg) if jacobi else None
    u, res, _ = conjugate_gradient(matvec, f, tol, maxiter or iteration_cap(cond), precond)
    if np.linalg.norm(u) > (1 + 10 * tol) * np.linalg.norm(f) / lam:
        raise SolverError("resolvent contraction violated", res)
    return u
