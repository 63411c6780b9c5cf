"""Symmetric jump-rate kernels and the assumption diagnostics.

Three kernel kinds are supported:

* ``mott``: ``c = exp(-gamma |x - y| - beta (|E| + |E'| + |E - E'|))``
* ``constant_range``: ``c = c0`` for ``|x - y| <= R``, else 0
* ``conductance_table``: explicit symmetric map ``{(i, j): c_ij}`` over point indices

All kinds are truncated at the hard cutoff ``R_cut`` (default ``10/gamma``
for Mott, ``R`` for constant range) and use minimum-image distances on the
torus.  The effective cutoff never exceeds ``L/2`` so that each pair of
points has a single periodic image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .environment import MarkedConfiguration, minimum_image, sphere_surface
from .unionfind import UnionFind

KERNEL_KINDS = ("mott", "constant_range", "conductance_table")

# relative slack on the constant-range indicator, so that lattice neighbours at
# distance exactly R survive coordinate roundoff
RANGE_SLACK = 1e-9

INTEGRABILITY_CAVEAT = (
    "moment conditions concern the infinite-volume law; the values reported are "
    "finite-sample empirical Palm moments and do not certify integrability"
)


@dataclass(frozen=True, eq=False)
class RateKernel:
    """Immutable description of a symmetric rate law ``c_{x,y}(omega)``."""

    kind: str = "mott"
    gamma: float = 1.0
    beta: float = 0.0
    c0: float = 1.0
    R: float = 1.0
    R_cut: float | None = None
    table: dict = field(default_factory=dict)
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.kind == "mott" and not (self.gamma > 0 and self.beta >= 0):
            raise ValueError("mott kernel needs gamma > 0 and beta >= 0")
        if self.kind == "constant_range" and not (self.c0 > 0 and self.R > 0):
            raise ValueError("constant_range kernel needs c0 > 0 and R > 0")
        if not self.scale > 0:
            raise ValueError(f"rate scale must be positive, got {self.scale}")
        if self.R_cut is not None and not self.R_cut > 0:
            raise ValueError(f"R_cut must be positive, got {self.R_cut}")
        if self.kind == "conductance_table":
            canon = {}
            for (i, j), c in dict(self.table).items():
                i, j, c = int(i), int(j), float(c)
                if i == j:
                    raise ValueError(f"self-rate ({i}, {i}) in conductance table")
                if not (c >= 0 and math.isfinite(c)):
                    raise ValueError(f"rate for ({i}, {j}) must be finite and >= 0")
                key = (min(i, j), max(i, j))
                if key in canon and canon[key] != c:
                    raise ValueError(f"conductance table is not symmetric at {key}")
                canon[key] = c
            object.__setattr__(self, "table", canon)

    @classmethod
    def mott(cls, gamma, beta=0.0, R_cut=None):
        return cls("mott", gamma=float(gamma), beta=float(beta), R_cut=R_cut)

    @classmethod
    def constant_range(cls, c0=1.0, R=1.0, R_cut=None):
        return cls("constant_range", c0=float(c0), R=float(R), R_cut=R_cut)

    @classmethod
    def conductance_table(cls, table, R_cut=None):
        return cls("conductance_table", table=dict(table), R_cut=R_cut)

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        kind = spec.pop("kind", "mott")
        if "table" in spec:
            spec["table"] = {(int(i), int(j)): float(c) for i, j, c in spec["table"]}
        for key in ("gamma", "beta", "c0", "R", "scale"):
            if key in spec:
                spec[key] = float(spec[key])
        if spec.get("R_cut") is not None:
            spec["R_cut"] = float(spec["R_cut"])
        return cls(kind, **spec)

    def to_dict(self):
        out = {"kind": self.kind, "R_cut": self.cutoff}
        if self.scale != 1.0:
            out["scale"] = self.scale
        if self.kind == "mott":
            out.update(gamma=self.gamma, beta=self.beta)
        elif self.kind == "constant_range":
            out.update(c0=self.c0, R=self.R)
        else:
            out["table"] = [[i, j, c] for (i, j), c in sorted(self.table.items())]
        return out

    @property
    def cutoff(self):
        """Configured cutoff radius (before clamping to half the box)."""
        if self.R_cut is not None:
            return float(self.R_cut)
        if self.kind == "mott":
            return 10.0 / self.gamma
        if self.kind == "constant_range":
            return self.R * (1 + RANGE_SLACK)
        return math.inf

    def effective_cutoff(self, L):
        return min(self.cutoff, 0.5 * float(L))

    def scaled(self, kappa):
        """Same kernel with every rate multiplied by ``kappa``."""
        return replace(self, scale=self.scale * float(kappa))

    def rates(self, cfg, i, j, dist):
        """Vectorised rates for index pairs ``(i, j)`` at distances ``dist``."""
        i = np.asarray(i)
        j = np.asarray(j)
        dist = np.asarray(dist, dtype=float)
        inside = dist <= self.effective_cutoff(cfg.L)
        if self.kind == "mott":
            Ei, Ej = cfg.marks[i], cfg.marks[j]
            u = self.beta * (np.abs(Ei) + np.abs(Ej) + np.abs(Ei - Ej))
            c = np.exp(-self.gamma * dist - u)
        elif self.kind == "constant_range":
            c = np.where(dist <= self.R * (1 + RANGE_SLACK), self.c0, 0.0)
        else:
            lo, hi = np.minimum(i, j).ravel(), np.maximum(i, j).ravel()
            c = np.array([self.table.get((a, b), 0.0) for a, b in zip(lo.tolist(), hi.tolist())])
            c = c.reshape(dist.shape)
        return np.where(inside, self.scale * c, 0.0)

    def bound(self):
        """Radial majorant ``g(r)`` with ``c_{x,y} <= g(|x - y|)``, as a callable, and sup g."""
        rc, k = self.cutoff, self.scale
        if self.kind == "mott":
            return (lambda r: np.where(np.asarray(r) <= rc, k * np.exp(-self.gamma * np.asarray(r)), 0.0)), k
        if self.kind == "constant_range":
            return (lambda r: np.where(np.asarray(r) <= self.R, k * self.c0, 0.0)), k * self.c0
        cmax = k * max(self.table.values(), default=0.0)
        return (lambda r: np.where(np.asarray(r) <= rc, cmax, 0.0)), cmax

    def bound_integral(self, d):
        """``int_{R^d} g(|x|) dx`` for the majorant of :meth:`bound`."""
        s = sphere_surface(d) * self.scale
        if self.kind == "mott":
            return s * math.gamma(d) / self.gamma ** d
        if self.kind == "constant_range":
            return self.c0 * s * self.R ** d / d
        rc = self.cutoff
        if not math.isfinite(rc):
            return math.inf
        return max(self.table.values(), default=0.0) * s * rc ** d / d


@dataclass(frozen=True, eq=False)
class PairTable:
    """All unordered pairs ``i < j`` with positive rate, with displacements ``x_j - x_i``."""

    i: np.ndarray
    j: np.ndarray
    disp: np.ndarray
    dist: np.ndarray
    rate: np.ndarray
    n_points: int

    def __len__(self):
        return self.i.shape[0]


def candidate_pairs(cfg: MarkedConfiguration, radius: float):
    """Unordered pairs within ``radius`` (minimum image), sorted lexicographically."""
    n = cfg.n_points
    if n < 2 or radius <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    tree = cKDTree(cfg.points, boxsize=cfg.L)
    pairs = tree.query_pairs(radius, output_type="ndarray").astype(np.int64)
    if pairs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs.sort(axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def pair_table(cfg: MarkedConfiguration, kernel: RateKernel) -> PairTable:
    """Positive-rate pairs of ``cfg`` under ``kernel``."""
    if kernel.kind == "conductance_table":
        keys = np.array(sorted(kernel.table), dtype=np.int64).reshape(-1, 2)
        if keys.size and keys.max() >= cfg.n_points:
            raise IndexError("conductance table references a point index outside the configuration")
        pairs = keys
    else:
        pairs = candidate_pairs(cfg, kernel.effective_cutoff(cfg.L))
    i, j = pairs[:, 0], pairs[:, 1]
    disp = minimum_image(cfg.points[j] - cfg.points[i], cfg.L)
    dist = np.linalg.norm(disp, axis=1)
    c = kernel.rates(cfg, i, j, dist)
    keep = c > 0
    return PairTable(i[keep], j[keep], disp[keep], dist[keep], c[keep], cfg.n_points)


def evaluate_rate(kernel: RateKernel, cfg: MarkedConfiguration, i: int, j: int) -> float:
    """Rate ``c_{x_i, x_j}`` between two distinct points."""
    n = cfg.n_points
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"point index out of range for {n} points")
    if i == j:
        raise ValueError("self-rates are undefined; the generator handles the diagonal")
    dist = float(np.linalg.norm(minimum_image(cfg.points[j] - cfg.points[i], cfg.L)))
    return float(kernel.rates(cfg, np.array([i]), np.array([j]), np.array([dist]))[0])


def moment_lambda_k(cfg, kernel, k, pairs=None):
    """Per-point ``lambda_k = sum_b c_ab |x_b - x_a|^k`` and its Palm mean."""
    if k not in (0, 1, 2):
        raise ValueError(f"k must be 0, 1 or 2, got {k}")
    pt = pair_table(cfg, kernel) if pairs is None else pairs
    w = pt.rate * pt.dist ** k
    lam = np.bincount(pt.i, w, minlength=cfg.n_points) + np.bincount(pt.j, w, minlength=cfg.n_points)
    return lam, float(lam.mean()) if lam.size else 0.0


def fstar(cfg, kernel, pairs=None):
    """Per-point ``F_* = sum_y c_ay lambda_0(y)`` and its Palm mean."""
    pt = pair_table(cfg, kernel) if pairs is None else pairs
    lam0, _ = moment_lambda_k(cfg, kernel, 0, pt)
    n = cfg.n_points
    f = np.bincount(pt.i, pt.rate * lam0[pt.j], minlength=n) + np.bincount(pt.j, pt.rate * lam0[pt.i], minlength=n)
    return f, float(f.mean()) if f.size else 0.0


@dataclass
class AssumptionReport:
    lambda0_mean: float
    lambda0_sq_mean: float
    lambda1_sq_mean: float
    lambda2_mean: float
    fstar_mean: float
    connected: bool
    n_components: int
    symmetry_ok: bool
    n_points: int
    n_edges: int
    caveat: str = INTEGRABILITY_CAVEAT

    def to_dict(self):
        return {
            "symmetry": {"symmetry_ok": self.symmetry_ok},
            "moments": {"lambda0_mean": self.lambda0_mean, "lambda0_sq_mean": self.lambda0_sq_mean,
                   "lambda1_sq_mean": self.lambda1_sq_mean, "lambda2_mean": self.lambda2_mean},
            "two_step": {"fstar_mean": self.fstar_mean},
            "connectivity": {"connected": self.connected, "n_components": self.n_components},
            "sample": {"n_points": self.n_points, "n_edges": self.n_edges},
            "caveat": self.caveat,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def assumption_diagnostics(cfg: MarkedConfiguration, kernel: RateKernel) -> AssumptionReport:
    """Empirical Palm moments, symmetry and connectivity of the sampled graph.

    Never raises on a failed assumption; problems are flagged in the report.
    """
    pt = pair_table(cfg, kernel)
    n = cfg.n_points
    lam0, _ = moment_lambda_k(cfg, kernel, 0, pt)
    lam1, _ = moment_lambda_k(cfg, kernel, 1, pt)
    lam2, _ = moment_lambda_k(cfg, kernel, 2, pt)
    fs, _ = fstar(cfg, kernel, pt)
    forward = kernel.rates(cfg, pt.i, pt.j, pt.dist)
    backward = kernel.rates(cfg, pt.j, pt.i, pt.dist)
    uf = UnionFind(n).union_edges(pt.i, pt.j)
    mean = (lambda v: float(v.mean()) if v.size else 0.0)
    return AssumptionReport(
        lambda0_mean=mean(lam0),
        lambda0_sq_mean=mean(lam0 ** 2),
        lambda1_sq_mean=mean(lam1 ** 2),
        lambda2_mean=mean(lam2),
        fstar_mean=mean(fs),
        connected=uf.n_components <= 1,
        n_components=uf.n_components,
        symmetry_ok=bool(np.array_equal(forward, backward)),
        n_points=n,
        n_edges=len(pt),
    )
