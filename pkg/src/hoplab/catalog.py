"""Catalog of test functions and initial profiles referenced by id.

Every entry is a closed-form function on the macroscopic torus
``[0, box)^d``; geometric parameters (centres, radii, widths) are given as
fractions of ``box`` so that one id works for every box size.  Ids may carry
parameters, e.g. ``bump[c=0.3,r=0.1,unit=1]``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .environment import sphere_surface

_ID_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\[(.*)\])?\s*$")

DEFAULTS = {
    "one": {},
    "cosine": {"k": 1.0},
    "bump": {"c": 0.5, "r": 0.25, "unit": 0.0},
    "gauss": {"c": 0.5, "s": 0.1, "r": 0.4, "unit": 0.0},
    "step": {"x0": 0.5, "rho": 1.0},
    "constant": {"rho": 0.5},
    "wave": {"rho": 0.5, "a": 0.25, "k": 1.0},
}

DESCRIPTIONS = {
    "one": "phi(x) = 1 on the torus",
    "cosine": "phi(x) = prod_i cos(2 pi k x_i / box)",
    "bump": "phi(x) = A exp(1 - 1/(1 - s^2)), s = |x - c box| / (r box) < 1, else 0",
    "gauss": "phi(x) = A exp(-|y|^2 / (2 (s box)^2)) (1 - |y|^2/(r box)^2)^2 for |y| < r box, y = x - c box",
    "step": "rho(x) = rho for x_1 < x0 box, else 0 (periodic box profile)",
    "constant": "rho(x) = rho",
    "wave": "rho(x) = rho + a cos(2 pi k x_1 / box)",
}


def parse_id(fid):
    m = _ID_RE.match(fid)
    if m is None or m.group(1) not in DEFAULTS:
        raise KeyError(f"unknown catalog id {fid!r}; known: {sorted(DEFAULTS)}")
    name, raw = m.group(1), m.group(2)
    params = dict(DEFAULTS[name])
    if raw:
        for tok in raw.split(","):
            key, sep, val = tok.partition("=")
            key = key.strip()
            if not sep or key not in params:
                raise KeyError(f"bad parameter {tok!r} in catalog id {fid!r}")
            params[key] = float(val)
    return name, params


def describe(fid):
    name, params = parse_id(fid)
    args = ", ".join(f"{k}={v:g}" for k, v in params.items())
    return f"{DESCRIPTIONS[name]}  [{args}]" if args else DESCRIPTIONS[name]


def _radial_mass(profile, radius, d):
    val, _ = integrate.quad(lambda s: profile(s) * s ** (d - 1), 0.0, radius, limit=200)
    return sphere_surface(d) * val


@dataclass
class TestFunction:
    """A catalog function ``phi(x; box)`` with its gradient and support."""

    id: str
    name: str
    params: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def _centred(self, x, box):
        c = self.params["c"] * box
        y = np.asarray(x, dtype=float) - c
        return y - box * np.round(y / box)

    def amplitude(self, box, d):
        """Normalising factor; makes ``int phi dx = 1`` when ``unit=1``."""
        if not self.params.get("unit"):
            return 1.0
        R = self.params["r"] * box
        if self.name == "bump":
            prof = lambda s: math.exp(1.0 - 1.0 / (1.0 - (s / R) ** 2)) if s < R else 0.0
        else:
            S = self.params["s"] * box
            prof = lambda s: math.exp(-s * s / (2 * S * S)) * (1 - (s / R) ** 2) ** 2
        return 1.0 / _radial_mass(prof, R, d)

    def support_box(self, box, d):
        """Bounding box ``(lo, hi)`` of the support, in absolute coordinates."""
        if self.name in ("bump", "gauss"):
            c, r = self.params["c"] * box, self.params["r"] * box
            return np.full(d, c - r), np.full(d, c + r)
        return np.zeros(d), np.full(d, float(box))

    def __call__(self, x, box):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x.shape[1]
        p = self.params
        if self.name == "one":
            return np.ones(x.shape[0])
        if self.name == "cosine":
            return np.prod(np.cos(2 * np.pi * p["k"] * x / box), axis=1)
        if self.name == "step":
            return np.where(x[:, 0] < p["x0"] * box, p["rho"], 0.0)
        if self.name == "constant":
            return np.full(x.shape[0], p["rho"])
        if self.name == "wave":
            return p["rho"] + p["a"] * np.cos(2 * np.pi * p["k"] * x[:, 0] / box)
        y = self._centred(x, box)
        r2 = np.sum(y * y, axis=1)
        R2 = (p["r"] * box) ** 2
        inside = r2 < R2
        out = np.zeros(x.shape[0])
        q = r2[inside] / R2
        if self.name == "bump":
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - q))
        else:
            S2 = (p["s"] * box) ** 2
            out[inside] = np.exp(-r2[inside] / (2 * S2)) * (1 - q) ** 2
        return self.amplitude(box, d) * out

    def gradient(self, x, box):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        p = self.params
        if self.name in ("one", "constant"):
            return np.zeros((n, d))
        if self.name == "step":
            raise ValueError("the step profile has no classical gradient")
        if self.name in ("cosine", "wave"):
            k = 2 * np.pi * p["k"] / box
            if self.name == "wave":
                g = np.zeros((n, d))
                g[:, 0] = -p["a"] * k * np.sin(k * x[:, 0])
                return g
            c, s = np.cos(k * x), np.sin(k * x)
            g = np.empty((n, d))
            for i in range(d):
                others = np.prod(np.delete(c, i, axis=1), axis=1) if d > 1 else 1.0
                g[:, i] = -k * s[:, i] * others
            return g
        y = self._centred(x, box)
        r2 = np.sum(y * y, axis=1)
        R2 = (p["r"] * box) ** 2
        inside = r2 < R2
        g = np.zeros((n, d))
        q = r2[inside] / R2
        yi = y[inside]
        if self.name == "bump":
            val = np.exp(1.0 - 1.0 / (1.0 - q))
            # d/dy exp(1 - 1/(1-q)) = val * (-1/(1-q)^2) * 2y/R2
            g[inside] = (val * (-2.0 / (R2 * (1 - q) ** 2)))[:, None] * yi
        else:
            S2 = (p["s"] * box) ** 2
            e = np.exp(-r2[inside] / (2 * S2))
            g[inside] = (e * (1 - q) * (-(1 - q) / S2 - 4.0 / R2))[:, None] * yi
        return self.amplitude(box, d) * g


def get(fid) -> TestFunction:
    name, params = parse_id(fid)
    return TestFunction(fid, name, params)
