"""Effective (homogenised) equations on the macroscopic torus.

Fields live on the regular grid ``x_k = k h``, ``k = 0..n-1`` per axis, of
the torus ``[0, box)^d``.  The resolvent is solved with second-order centred
finite differences and CG; the heat semigroup is applied exactly in Fourier
space, which is convolution with the periodised Gaussian kernel of
covariance ``2 D t``.  Null directions of ``D`` get no diffusion in either.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .effective import EffectiveMatrix
from .microscale import Generator, conjugate_gradient, dirichlet_form, iteration_cap, l2_mu


@dataclass(frozen=True, eq=False)
class DensityField:
    values: np.ndarray
    box: float

    @property
    def d(self):
        return self.values.ndim

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def h(self):
        return self.box / self.n

    def coords(self):
        """Grid nodes as an ``(n^d, d)`` array in C order."""
        axes = [np.arange(self.n) * self.h] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def integral(self, other=None):
        v = self.values if other is None else self.values * np.asarray(other)
        return float(np.sum(v) * self.h ** self.d)

    def with_values(self, values):
        return DensityField(np.asarray(values, dtype=float).reshape(self.values.shape), self.box)

    def save_csv(self, path):
        rows = np.column_stack([self.coords(), self.values.ravel()])
        header = f"# h={self.h!r} dims={'x'.join([str(self.n)] * self.d)} box={self.box!r}"
        body = "\n".join(",".join(f"{v:.17g}" for v in row) for row in rows)
        Path(path).write_text(header + "\n" + body + "\n")


def grid_field(fn, box, n, d):
    """Sample ``fn(x, box)`` (a catalog function or any callable) on the grid."""
    field = DensityField(np.zeros((n,) * d), float(box))
    return field.with_values(fn(field.coords(), box))


def _as_matrix(D):
    return np.atleast_2d(D.D if isinstance(D, EffectiveMatrix) else np.asarray(D, dtype=float))


def diffusion_operator(D, n, box):
    """Sparse ``K = -sum_ij D_ij delta_i delta_j`` (symmetric, PSD for PSD ``D``)."""
    D = _as_matrix(D)
    d = D.shape[0]
    h = box / n
    I = sp.identity(n, format="csr")
    shift = sp.diags([np.ones(n - 1), [1.0]], [1, -(n - 1)], shape=(n, n), format="csr") if n > 1 else I
    second = (shift + shift.T - 2 * I) / h ** 2
    first = (shift - shift.T) / (2 * h)

    def along(ops):
        out = ops[0]
        for op in ops[1:]:
            out = sp.kron(out, op, format="csr")
        return out

    K = sp.csr_matrix((n ** d, n ** d))
    for a in range(d):
        for b in range(d):
            if D[a, b] == 0.0:
                continue
            if a == b:
                ops = [second if k == a else I for k in range(d)]
            else:
                ops = [first if k in (a, b) else I for k in range(d)]
            K = K - D[a, b] * along(ops)
    return K.tocsr()


def diffusion_form(D, u: DensityField, v: DensityField) -> float:
    """Discrete ``int D grad u . grad v dx`` (summation by parts of ``K``)."""
    K = diffusion_operator(D, u.n, u.box)
    return float(v.values.ravel() @ (K @ u.values.ravel()) * u.h ** u.d)


def solve_effective_resolvent(D, lam: float, f: DensityField, tol: float = 1e-10) -> DensityField:
    """Weak solution of ``lam u - div(D grad u) = f`` on the periodic grid."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    K = diffusion_operator(D, f.n, f.box)
    A = (K + lam * sp.identity(K.shape[0])).tocsr()
    cond = (lam + abs(K).sum(axis=1).max()) / lam
    u, _, _ = conjugate_gradient(lambda v: A @ v, f.values.ravel(), tol, iteration_cap(cond))
    return f.with_values(u)


def heat_semigroup(D, t: float, f: DensityField) -> DensityField:
    """``P_t f``: Fourier multiplier ``exp(-t k . D k)`` on the grid data."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if t == 0:
        return f.with_values(f.values.copy())
    D = _as_matrix(D)
    d = f.d
    k1 = 2 * np.pi * np.fft.fftfreq(f.n, d=f.h)
    ks = np.meshgrid(*([k1] * d), indexing="ij")
    quad = sum(D[a, b] * ks[a] * ks[b] for a in range(d) for b in range(d))
    out = np.fft.ifftn(np.fft.fftn(f.values) * np.exp(-t * quad)).real
    return f.with_values(out)


def interpolate(field: DensityField, x) -> np.ndarray:
    """Periodic multilinear interpolation at points ``x`` of shape ``(N, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = field.n, field.d
    s = np.mod(x / field.h, n)
    i0 = np.floor(s).astype(np.int64) % n
    w = s - np.floor(s)
    out = np.zeros(x.shape[0])
    for corner in range(2 ** d):
        bits = [(corner >> k) & 1 for k in range(d)]
        idx = tuple((i0[:, k] + bits[k]) % n for k in range(d))
        weight = np.prod([w[:, k] if bits[k] else 1.0 - w[:, k] for k in range(d)], axis=0)
        out += weight * field.values[idx]
    return out


def compare_micro_macro(gen: Generator, u_eps, u: DensityField, D, phis=(), m=None):
    """Compare a microscopic solution with a macroscopic one.

    Returns a dict with

    * ``strong``: ``||u_eps - u(pos)||_{mu} / ||u(pos)||_{mu}``
    * ``weak``: per test function, ``|<u_eps, phi>_mu - m <u, phi>_dx|``
    * ``energy``: ``|1/2 ||grad u_eps||^2_nu - m int grad u . D grad u|``
    * ``flow``: per test function, ``|1/2 <grad u_eps, grad phi>_nu - m int D grad u . grad phi|``
    """
    if abs(u.box - gen.box) > 1e-9 * gen.box:
        raise ValueError(f"grid box {u.box} does not match the scaled sample box {gen.box}")
    m = gen.intensity if m is None else m
    u_eps = np.asarray(u_eps, dtype=float)
    u_nodes = interpolate(u, gen.positions)
    ref = np.sqrt(l2_mu(gen, u_nodes))
    diff = np.sqrt(l2_mu(gen, u_eps - u_nodes))
    strong = diff / ref if ref > 0 else diff
    energy_micro = dirichlet_form(gen, u_eps, u_eps)
    energy_macro = m * diffusion_form(D, u, u)
    weak, flow = {}, {}
    for phi in phis:
        phi_nodes = phi(gen.positions, gen.box)
        phi_grid = grid_field(phi, u.box, u.n, u.d)
        weak[phi.id] = abs(l2_mu(gen, u_eps, phi_nodes) - m * u.integral(phi_grid.values))
        flow[phi.id] = abs(dirichlet_form(gen, u_eps, phi_nodes) - m * diffusion_form(D, u, phi_grid))
    return {
        "strong": float(strong),
        "weak": weak,
        "energy": float(abs(energy_micro - energy_macro)),
        "flow": flow,
        "energy_micro": float(energy_micro),
        "energy_macro": float(energy_macro),
    }
