"""Corrector problem and effective diffusion matrix on a periodic sample.

With ``eps = 1`` the corrector ``chi_a`` for a direction ``a`` minimises

    1/2 sum_edges c_ij (a . z_ij + chi_j - chi_i)^2 + lambda_reg sum_i chi_i^2,

i.e. solves ``(Lap + 2 lambda_reg) chi = b_a`` with ``(b_a)_i = sum_j c_ij a . z_ij``
and ``Lap`` the graph Laplacian.  The matrix is then

    D a = (1 / N) sum_edges c_ij z_ij (a . z_ij + chi_j - chi_i),

the per-point (Palm) average of the flux, which equals ``a . D a`` on the
diagonal by the corrector equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import SolverError
from .microscale import Generator, build_generator, conjugate_gradient

RANK_TOL = 1e-8


@dataclass
class CorrectorSolution:
    direction: np.ndarray
    chi: np.ndarray
    residual: float
    lambda_reg: float
    iterations: int = 0


@dataclass
class EffectiveMatrix:
    D: np.ndarray
    eigenvalues: np.ndarray
    d_star: int
    frame: np.ndarray
    residuals: list = field(default_factory=list)
    lambda_reg: float = 0.0
    n_points: int = 0
    raw: np.ndarray | None = None

    @property
    def d(self):
        return self.D.shape[0]

    def quadratic(self, a):
        a = np.asarray(a, dtype=float)
        return float(a @ self.D @ a)

    def scaled(self, kappa):
        return effective_from_matrix(kappa * self.D)

    def to_dict(self):
        return {
            "D": self.D.ravel().tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "d_star": self.d_star,
            "frame": self.frame.ravel().tolist(),
            "residuals": list(self.residuals),
            "lambda_reg": self.lambda_reg,
            "n_points": self.n_points,
        }


def drift(gen: Generator, a):
    """``b_a`` with ``(b_a)_i = sum_j c_ij a . z_ij`` (``z`` the minimum-image displacement)."""
    s = gen.rate * (gen.disp @ np.asarray(a, dtype=float))
    n = gen.n_nodes
    return np.bincount(gen.i, s, minlength=n) - np.bincount(gen.j, s, minlength=n)


def n_components(gen: Generator) -> int:
    return connected_components(gen.conductance, directed=False)[0]


def solve_corrector(gen: Generator, a, lambda_reg: float = 0.0, tol: float = 1e-10, jacobi: bool = True):
    """Periodic corrector for direction ``a`` on an ``eps = 1`` generator."""
    if gen.eps != 1.0:
        raise ValueError(f"the corrector is solved on the eps = 1 generator, got eps = {gen.eps}")
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    a = np.asarray(a, dtype=float)
    if lambda_reg == 0 and n_components(gen) > 1:
        raise SolverError("sampled graph is disconnected: use lambda_reg > 0 or solve per component")
    b = drift(gen, a)
    C, deg = gen.conductance, gen.degree
    shift = 2.0 * lambda_reg

    def matvec(v):
        return deg * v - C @ v + shift * v

    diag = deg + shift
    precond = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0) if jacobi else None
    try:
        chi, res, its = conjugate_gradient(matvec, b, tol, precond=precond)
    except SolverError as err:
        raise SolverError(f"corrector solve failed for direction {a.tolist()}: {err}",
                          err.residual, err.iterations) from err
    if lambda_reg == 0:
        chi -= chi.mean()
    return CorrectorSolution(a, chi, res, float(lambda_reg), its)


def flux_average(gen: Generator, a, chi):
    """``(1/N) sum_edges c z (a . z + chi_j - chi_i)``."""
    w = gen.rate * (gen.disp @ np.asarray(a, dtype=float) + chi[gen.j] - chi[gen.i])
    return (w @ gen.disp) / gen.n_nodes


def rayleigh_value(gen: Generator, a, f=None):
    """Per-point average of ``1/2 sum_{j} c_ij (a . z_ij + f_j - f_i)^2`` (ordered pairs)."""
    g = gen.disp @ np.asarray(a, dtype=float)
    if f is not None:
        f = np.asarray(f, dtype=float)
        g = g + f[gen.j] - f[gen.i]
    return float(np.sum(gen.rate * g * g) / gen.n_nodes)


def detect_rank(D, rank_tol: float = RANK_TOL):
    """Number of eigenvalues above ``rank_tol * max(1, lambda_max)`` and the ordering frame.

    The frame's rows are the eigenvectors in decreasing eigenvalue order, so
    ``frame @ D @ frame.T`` is diagonal with the positive directions first.
    """
    D = np.asarray(D, dtype=float)
    w, V = np.linalg.eigh(0.5 * (D + D.T))
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    for k in range(V.shape[1]):
        col = V[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            V[:, k] = -col
    lam_max = w[0] if w.size else 0.0
    d_star = int(np.sum(w > rank_tol * max(1.0, lam_max)))
    return d_star, V.T.copy(), w


def effective_from_matrix(D, rank_tol: float = RANK_TOL, **extra):
    D = np.asarray(D, dtype=float)
    d_star, frame, w = detect_rank(D, rank_tol)
    return EffectiveMatrix(D, w, d_star, frame, **extra)


def effective_matrix_from_generator(gen: Generator, lambda_reg: float = 0.0, tol: float = 1e-10,
                                    rank_tol: float = RANK_TOL, return_correctors: bool = False):
    d = gen.d
    raw = np.zeros((d, d))
    sols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        sol = solve_corrector(gen, e, lambda_reg, tol)
        raw[:, k] = flux_average(gen, e, sol.chi)
        sols.append(sol)
    D = 0.5 * (raw + raw.T)
    eff = effective_from_matrix(D, rank_tol, residuals=[s.residual for s in sols],
                                lambda_reg=float(lambda_reg), n_points=gen.n_nodes, raw=raw)
    return (eff, sols) if return_correctors else eff


def effective_matrix(cfg, kernel, lambda_reg: float = 0.0, tol: float = 1e-10, rank_tol: float = RANK_TOL):
    """Effective diffusion matrix of one periodic sample."""
    return effective_matrix_from_generator(build_generator(cfg, kernel, 1.0), lambda_reg, tol, rank_tol)


def reference_effective_matrix(spec, kernel, L: float, n_samples: int, seed: int, lambda_reg: float = 0.0,
                               tol: float = 1e-10, rank_tol: float = RANK_TOL):
    """Average of per-sample matrices over independent samples of side ``L``.

    Sample ``k`` is drawn with seed ``derive_seed(seed, k)``; the spread
    across samples is kept in ``residuals``-style metadata via ``raw``.
    """
    from .environment import derive_seed

    mats = []
    n_total = 0
    for k in range(n_samples):
        cfg = spec.sample(L, derive_seed(seed, k))
        eff = effective_matrix(cfg, kernel, lambda_reg, tol, rank_tol)
        mats.append(eff.D)
        n_total += eff.n_points
    stack = np.array(mats)
    return effective_from_matrix(stack.mean(axis=0), rank_tol, lambda_reg=float(lambda_reg),
                                 n_points=n_total, raw=stack)
