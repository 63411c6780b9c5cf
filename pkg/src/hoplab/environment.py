"""Marked point-process environments on a periodic box.

An environment is a finite sample ``{(x_i, E_i)}`` of a marked simple point
process on the torus ``[0, L)^d``: either a homogeneous Poisson cloud or a
randomly shifted site-diluted lattice.  Palm expectations of local
observables are estimated by averaging over all sampled points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MARK_KINDS = ("constant", "uniform", "exponential", "empirical")
OBSERVABLES = ("one", "lambda0", "lambda1", "lambda2", "fstar")


@dataclass(frozen=True)
class MarkDistribution:
    """Law of the energy mark attached to each point.

    ``kind`` is one of ``constant(value)``, ``uniform(a, b)``,
    ``exponential(rate)`` or ``empirical(values)`` (uniform resampling from
    a fixed list).
    """

    kind: str = "constant"
    value: float = 0.0
    a: float = 0.0
    b: float = 1.0
    rate: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in MARK_KINDS:
            raise ValueError(f"unknown mark kind {self.kind!r}; expected one of {MARK_KINDS}")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError(f"uniform marks need a < b, got a={self.a}, b={self.b}")
        if self.kind == "exponential" and not self.rate > 0:
            raise ValueError(f"exponential marks need rate > 0, got {self.rate}")
        if self.kind == "empirical":
            if len(self.values) == 0:
                raise ValueError("empirical marks need a nonempty list of values")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def constant(cls, value=0.0):
        return cls("constant", value=float(value))

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", a=float(a), b=float(b))

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", rate=float(rate))

    @classmethod
    def empirical(cls, values):
        return cls("empirical", values=tuple(values))

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        kind = spec.pop("kind", "constant")
        if kind == "empirical" and "values" in spec:
            spec["values"] = tuple(spec["values"])
        return cls(kind, **spec)

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "uniform":
            return {"kind": "uniform", "a": self.a, "b": self.b}
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        return {"kind": "empirical", "values": list(self.values)}

    def sample(self, rng, n):
        if self.kind == "constant":
            return np.full(n, self.value, dtype=float)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size=n)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size=n)
        return np.asarray(self.values, dtype=float)[rng.integers(0, len(self.values), size=n)]


@dataclass(frozen=True, eq=False)
class MarkedConfiguration:
    """Finite marked sample on the periodic box ``[0, L)^d``.

    Immutable after creation; ``points`` has shape ``(N, d)`` and ``marks``
    shape ``(N,)``.
    """

    d: int
    L: float
    points: np.ndarray
    marks: np.ndarray
    seed: int = 0
    nominal_intensity: float = 0.0
    periodic: bool = True
    source: str = "poisson"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float).reshape(-1, self.d)
        marks = np.ascontiguousarray(self.marks, dtype=float).reshape(-1)
        if pts.shape[0] != marks.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {marks.shape[0]} marks")
        if pts.size and (pts.min() < 0.0 or pts.max() >= self.L):
            raise ValueError("point coordinates must lie in [0, L)")
        pts.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "marks", marks)

    def __len__(self):
        return self.points.shape[0]

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def volume(self):
        return float(self.L) ** self.d

    def displacement(self, i, j):
        """Minimum-image displacement ``x_j - x_i`` (vectorised over i, j)."""
        return minimum_image(self.points[j] - self.points[i], self.L)

    def distance(self, i, j):
        return np.linalg.norm(np.atleast_2d(self.displacement(i, j)), axis=-1)

    def shifted(self, shift):
        """Copy translated by ``shift`` and wrapped back into the box."""
        pts = wrap(self.points + np.asarray(shift, dtype=float), self.L)
        return MarkedConfiguration(self.d, self.L, pts, self.marks, self.seed,
                                   self.nominal_intensity, True, self.source, dict(self.meta))


def wrap(x, L):
    """Map coordinates into ``[0, L)``, guarding against ``x mod L == L``."""
    y = np.mod(x, L)
    return np.where(y >= L, 0.0, y)


def minimum_image(dx, L):
    return dx - L * np.round(dx / L)


def _check_dim(d):
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")


def sample_poisson_marked(d: int, L: float, m: float, marks: MarkDistribution, seed: int) -> MarkedConfiguration:
    """Homogeneous Poisson cloud of intensity ``m`` on ``[0, L)^d`` with i.i.d. marks."""
    _check_dim(d)
    if not L > 0:
        raise ValueError(f"box side must be positive, got {L}")
    if m < 0:
        raise ValueError(f"intensity must be nonnegative, got {m}")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(m * float(L) ** d))
    pts = wrap(rng.uniform(0.0, L, size=(n, d)), L)
    e = marks.sample(rng, n)
    return MarkedConfiguration(d, float(L), pts, e, seed, float(m), True, "poisson",
                               {"marks": marks.to_dict()})


def sample_diluted_lattice(d: int, L: int, p: float, marks: MarkDistribution, seed: int) -> MarkedConfiguration:
    """Site percolation on ``{0..L-1}^d`` shifted by one uniform offset in ``[0,1)^d``."""
    _check_dim(d)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"retention probability must lie in [0, 1], got {p}")
    if int(L) != L or L < 1:
        raise ValueError(f"lattice side must be a positive integer, got {L}")
    L = int(L)
    rng = np.random.default_rng(seed)
    offset = rng.uniform(0.0, 1.0, size=d)
    grids = np.meshgrid(*([np.arange(L)] * d), indexing="ij")
    sites = np.stack([g.ravel() for g in grids], axis=1).astype(float)
    keep = rng.uniform(size=sites.shape[0]) < p
    pts = wrap(sites[keep] + offset, L)
    e = marks.sample(rng, pts.shape[0])
    return MarkedConfiguration(d, float(L), pts, e, seed, float(p), True, "lattice",
                               {"marks": marks.to_dict(), "offset": offset.tolist()})


ENV_KINDS = ("poisson", "lattice")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Recipe for sampling environments of any box size.

    ``intensity`` is the Poisson intensity ``m`` for ``poisson`` and the
    retention probability for ``lattice``.
    """

    kind: str = "poisson"
    d: int = 2
    intensity: float = 1.0
    marks: MarkDistribution = field(default_factory=MarkDistribution)

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {ENV_KINDS}")
        _check_dim(self.d)
        if self.kind == "lattice" and not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"lattice retention must lie in [0, 1], got {self.intensity}")
        if self.intensity < 0:
            raise ValueError(f"intensity must be nonnegative, got {self.intensity}")

    @property
    def point_density(self):
        """Expected number of points per unit volume."""
        return float(self.intensity)

    def sample(self, L, seed) -> MarkedConfiguration:
        if self.kind == "poisson":
            return sample_poisson_marked(self.d, L, self.intensity, self.marks, seed)
        side = int(round(L))
        if abs(side - L) > 1e-9 * max(1.0, L):
            raise ValueError(f"lattice environments need an integer box side, got {L}")
        return sample_diluted_lattice(self.d, side, self.intensity, self.marks, seed)

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        marks = spec.pop("marks", None)
        unknown = set(spec) - {"kind", "d", "intensity"}
        if unknown:
            raise ValueError(f"unknown environment fields {sorted(unknown)}")
        md = MarkDistribution.from_dict(marks) if marks is not None else MarkDistribution()
        return cls(spec.get("kind", "poisson"), int(spec.get("d", 2)), float(spec.get("intensity", 1.0)), md)

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "intensity": self.intensity, "marks": self.marks.to_dict()}


def derive_seed(*keys) -> int:
    """Deterministic 63-bit seed from a tuple of nonnegative integer keys."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def estimate_intensity(cfg: MarkedConfiguration) -> float:
    return cfg.n_points / cfg.volume


def observable_values(cfg, kernel, g):
    """Per-point values ``g(tau_a omega)`` for a catalog observable."""
    from . import rates

    if g == "one":
        return np.ones(cfg.n_points)
    if g in ("lambda0", "lambda1", "lambda2"):
        return rates.moment_lambda_k(cfg, kernel, int(g[-1]))[0]
    if g == "fstar":
        return rates.fstar(cfg, kernel)[0]
    raise ValueError(f"unknown observable {g!r}; expected one of {OBSERVABLES}")


def palm_average(cfg, kernel, g, phi, eps):
    """Weighted ergodic sum ``eps^d sum_a phi(eps a) g(tau_a omega)``.

    ``phi`` is a catalog test function (see :mod:`hoplab.catalog`) whose
    support must fit inside the scaled box ``[0, eps L)^d``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    box = eps * cfg.L
    lo, hi = phi.support_box(box, cfg.d)
    if np.any(lo < -1e-12) or np.any(hi > box + 1e-12):
        raise ValueError(f"support of {phi.id!r} exceeds the scaled box [0, {box:g})^{cfg.d}")
    if cfg.n_points == 0:
        return 0.0
    values = observable_values(cfg, kernel, g)
    return float(eps ** cfg.d * np.sum(phi(eps * cfg.points, box) * values))


def save_configuration(cfg: MarkedConfiguration, path) -> None:
    """Write the tab-separated point table (17 significant digits)."""
    lines = [f"# d={cfg.d}  L={cfg.L!r}  m={cfg.nominal_intensity!r}  seed={cfg.seed}"]
    for x, e in zip(cfg.points, cfg.marks):
        lines.append("\t".join(f"{v:.17g}" for v in (*x, e)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_configuration(path) -> MarkedConfiguration:
    header = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                header[key] = val
        elif line.strip():
            rows.append([float(v) for v in line.split("\t")])
    d = int(header["d"])
    arr = np.asarray(rows, dtype=float).reshape(-1, d + 1)
    return MarkedConfiguration(d, float(header["L"]), arr[:, :d], arr[:, d],
                               int(header.get("seed", 0)), float(header.get("m", 0.0)))


def disjoint_subbox_counts(cfg: MarkedConfiguration, n_per_axis: int = 2) -> np.ndarray:
    """Point counts in the ``n_per_axis^d`` congruent sub-boxes of the torus."""
    idx = np.floor(cfg.points / (cfg.L / n_per_axis)).astype(int).clip(0, n_per_axis - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (n_per_axis,) * cfg.d) if cfg.n_points else idx[:, 0]
    return np.bincount(flat, minlength=n_per_axis ** cfg.d)


def sphere_surface(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
