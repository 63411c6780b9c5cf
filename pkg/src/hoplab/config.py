"""Run configuration: YAML schema, validation and derived defaults.

Minimal example::

    experiment: homogenize
    environment: {kind: poisson, d: 2, intensity: 4, marks: {kind: uniform, a: -0.5, b: 0.5}}
    kernel: {kind: mott, gamma: 2, beta: 1}
    box: 2.0
    eps_list: [0.2, 0.1, 0.05]
    seeds: [0, 1, 2, 3, 4]

Every other key has a default; ``hoplab validate`` prints the resolved
values.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from . import catalog
from .environment import EnvironmentSpec
from .rates import RateKernel

EXPERIMENTS = ("sample", "diagnostics", "effective-d", "homogenize", "semigroup", "msd", "exclusion", "duality")


class ConfigError(ValueError):
    """Schema violation; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class Reference:
    """Independent samples (eps = 1) used to estimate the effective matrix."""

    L: float = 40.0
    samples: int = 4
    seed: int = 1000


@dataclass
class RunConfig:
    environment: EnvironmentSpec
    kernel: RateKernel
    seeds: list
    experiment: str | None = None
    L: float = 20.0
    box: float = 1.0
    eps_list: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    lam: float = 1.0
    t: float = 0.5
    f: str = "gauss"
    phis: list = field(default_factory=lambda: ["bump", "cosine"])
    rho0: str = "step"
    grid: int = 128
    cg_tol: float = 1e-10
    rank_tol: float = 1e-8
    lambda_reg: float = 0.0
    reference: Reference = field(default_factory=Reference)
    n_samples: int = 1000
    n_starts: int = 50
    T: float = 100.0
    n_checkpoints: int = 10
    n_schedules: int = 10000
    t0: float | None = None
    output: str | None = None

    def to_dict(self):
        out = {k: v for k, v in asdict(self).items() if k not in ("environment", "kernel", "reference")}
        out["lambda"] = out.pop("lam")
        out["environment"] = self.environment.to_dict()
        out["kernel"] = self.kernel.to_dict()
        out["reference"] = asdict(self.reference)
        out["tolerances"] = {"cg": out.pop("cg_tol"), "rank": out.pop("rank_tol"), "lambda_reg": out.pop("lambda_reg")}
        return out


_SCALARS = {
    "L": float, "box": float, "lambda": float, "t": float, "grid": int, "n_samples": int, "n_starts": int,
    "T": float, "n_checkpoints": int, "n_schedules": int,
}
_KNOWN = set(_SCALARS) | {"experiment", "environment", "kernel", "seeds", "eps_list", "f", "phis", "rho0",
                          "tolerances", "reference", "t0", "output"}


def _positive(name, value, allow_zero=False):
    if not (value > 0 or (allow_zero and value == 0)):
        raise ConfigError(name, f"must be {'nonnegative' if allow_zero else 'positive'}, got {value}")
    return value


def _catalog_id(name, fid):
    if not isinstance(fid, str):
        raise ConfigError(name, f"expected a catalog id string, got {fid!r}")
    try:
        catalog.parse_id(fid)
    except KeyError as err:
        raise ConfigError(name, str(err.args[0])) from None
    return fid


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = sorted(set(raw) - _KNOWN)
    if unknown:
        raise ConfigError(unknown[0], f"unknown key; allowed keys are {sorted(_KNOWN)}")
    for req in ("environment", "kernel", "seeds"):
        if req not in raw:
            raise ConfigError(req, "required key is missing")

    exp = raw.get("experiment")
    if exp is not None and exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {exp!r}; expected one of {list(EXPERIMENTS)}")
    try:
        env = EnvironmentSpec.from_dict(raw["environment"])
    except (TypeError, ValueError, AttributeError) as err:
        raise ConfigError("environment", str(err)) from None
    try:
        kernel = RateKernel.from_dict(raw["kernel"])
    except (TypeError, ValueError, KeyError, AttributeError) as err:
        raise ConfigError("kernel", str(err)) from None

    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds", "must be a nonempty list of nonnegative integers")

    kw = {}
    for key, cast in _SCALARS.items():
        if key in raw:
            try:
                kw["lam" if key == "lambda" else key] = cast(raw[key])
            except (TypeError, ValueError):
                raise ConfigError(key, f"expected {cast.__name__}, got {raw[key]!r}") from None
    for key in ("L", "box", "lambda", "grid", "n_samples", "n_starts", "T", "n_checkpoints", "n_schedules"):
        if key in raw:
            _positive(key, kw["lam" if key == "lambda" else key])
    if "t" in kw:
        _positive("t", kw["t"], allow_zero=True)

    if "eps_list" in raw:
        eps = raw["eps_list"]
        if not isinstance(eps, list) or not eps:
            raise ConfigError("eps_list", "must be a nonempty list")
        try:
            eps = [float(e) for e in eps]
        except (TypeError, ValueError):
            raise ConfigError("eps_list", "entries must be numbers") from None
        if any(e <= 0 for e in eps):
            raise ConfigError("eps_list", "entries must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list", f"must be strictly decreasing, got {eps}")
        kw["eps_list"] = eps

    if "f" in raw:
        kw["f"] = _catalog_id("f", raw["f"])
    if "rho0" in raw:
        kw["rho0"] = _catalog_id("rho0", raw["rho0"])
    if "phis" in raw:
        if not isinstance(raw["phis"], list):
            raise ConfigError("phis", "must be a list of catalog ids")
        kw["phis"] = [_catalog_id("phis", p) for p in raw["phis"]]

    tol = raw.get("tolerances") or {}
    if not isinstance(tol, dict) or set(tol) - {"cg", "rank", "lambda_reg"}:
        raise ConfigError("tolerances", "allowed keys are cg, rank, lambda_reg")
    if "cg" in tol:
        kw["cg_tol"] = _positive("tolerances.cg", float(tol["cg"]))
    if "rank" in tol:
        kw["rank_tol"] = _positive("tolerances.rank", float(tol["rank"]))
    if "lambda_reg" in tol:
        kw["lambda_reg"] = _positive("tolerances.lambda_reg", float(tol["lambda_reg"]), allow_zero=True)

    if "reference" in raw:
        ref = raw["reference"]
        if not isinstance(ref, dict) or set(ref) - {"L", "samples", "seed"}:
            raise ConfigError("reference", "allowed keys are L, samples, seed")
        r = Reference(float(ref.get("L", 40.0)), int(ref.get("samples", 4)), int(ref.get("seed", 1000)))
        _positive("reference.L", r.L)
        _positive("reference.samples", r.samples)
        if r.seed < 0:
            raise ConfigError("reference.seed", "must be nonnegative")
        kw["reference"] = r

    if raw.get("t0") is not None:
        kw["t0"] = _positive("t0", float(raw["t0"]))
    if raw.get("output") is not None:
        kw["output"] = str(raw["output"])
    return RunConfig(env, kernel, list(seeds), exp, **kw)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError("<file>", f"cannot read {path}: {err.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("<file>", f"not valid YAML: {err}") from None
    return parse_config(raw)
