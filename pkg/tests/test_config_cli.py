import json

import pytest
import yaml

from hoplab.cli import main
from hoplab.config import ConfigError, load_config, parse_config

BASE = {
    "environment": {"kind": "poisson", "d": 2, "intensity": 4.0, "marks": {"kind": "uniform", "a": -0.5, "b": 0.5}},
    "kernel": {"kind": "mott", "gamma": 2.0, "beta": 1.0},
    "seeds": [0, 1],
}

SMALL = {"box": 1.0, "eps_list": [0.25, 0.125], "grid": 32, "reference": {"L": 8, "samples": 1, "seed": 5},
         "L": 6.0, "n_samples": 20, "n_starts": 5, "T": 2.0, "n_checkpoints": 3, "n_schedules": 50, "t": 0.2}


def write(tmp_path, **extra):
    raw = {**BASE, **extra}
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def error_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_defaults_and_roundtrip():
    cfg = parse_config(dict(BASE))
    assert cfg.eps_list == [0.2, 0.1, 0.05] and cfg.lam == 1.0
    d = cfg.to_dict()
    assert d["lambda"] == 1.0 and d["tolerances"]["cg"] == 1e-10
    again = parse_config({k: v for k, v in d.items() if v is not None})
    assert again.to_dict() == d


@pytest.mark.parametrize("patch, field", [
    ({"eps_list": [0.1, 0.2]}, "eps_list"),
    ({"eps_list": [0.1, -0.05]}, "eps_list"),
    ({"seeds": []}, "seeds"),
    ({"seeds": [-1]}, "seeds"),
    ({"kernel": {"kind": "quantum"}}, "kernel"),
    ({"phis": ["bump", "nope"]}, "phis"),
    ({"speed": 3}, "speed"),
    ({"grid": 0}, "grid"),
    ({"tolerances": {"cg": 1e-8, "atol": 1}}, "tolerances"),
    ({"experiment": "everything"}, "experiment"),
])
def test_schema_errors_name_the_field(patch, field):
    with pytest.raises(ConfigError) as info:
        parse_config({**BASE, **patch})
    assert info.value.field == field


def test_missing_required_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config({"environment": BASE["environment"], "seeds": [0]})
    assert info.value.field == "kernel"
    bad = tmp_path / "bad.yaml"
    bad.write_text("environment: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_cli_exit_2_on_decreasing_eps(tmp_path, capsys):
    path = write(tmp_path, eps_list=[0.05, 0.1])
    assert main(["homogenize", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    rec = error_record(capsys)
    assert rec["error"] == "config" and rec["field"] == "eps_list"


def test_cli_unknown_kernel_single_error(tmp_path, capsys):
    path = write(tmp_path, kernel={"kind": "quantum"})
    assert main(["validate", "--config", str(path)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and json.loads(err[0])["field"] == "kernel"


def test_validate_lists_defaults_and_catalog(tmp_path, capsys):
    path = write(tmp_path, phis=["bump[r=0.2]"])
    assert main(["validate", "--config", str(path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["config"]["grid"] == 128
    assert "phi(x) = A exp" in out["derived"]["catalog"]["phis[0]"]
    assert out["derived"]["t0"] == pytest.approx(0.5 / (4.0 * 2 * 3.141592653589793 / 4.0), rel=1e-6)


def test_run_requires_experiment(tmp_path, capsys):
    assert main(["run", "--config", str(write(tmp_path)), "--out", str(tmp_path / "o")]) == 2
    assert error_record(capsys)["field"] == "experiment"


def test_homogenize_is_deterministic(tmp_path):
    path = write(tmp_path, **SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["homogenize", "--config", str(path), "--out", str(a)]) == 0
    assert main(["homogenize", "--config", str(path), "--out", str(b), "--threads", "2"]) == 0
    for name in ("homogenize.csv", "homogenize_phi.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    by_eps = summary["metrics"]["median_by_eps"]
    assert set(by_eps) == {"strong", "weak", "energy", "flow"}
    for per_eps in by_eps.values():
        assert set(per_eps) == {"0.25", "0.125"}
    assert set(summary) >= {"inputs", "derived", "metrics", "outputs", "versions"}


@pytest.mark.parametrize("experiment, produced", [
    ("sample", "samples.csv"), ("diagnostics", "diagnostics.csv"), ("effective-d", "effective_d.csv"),
    ("semigroup", "semigroup.csv"), ("msd", "msd.csv"), ("exclusion", "exclusion_eps0.25.csv"),
])
def test_each_experiment_runs(tmp_path, experiment, produced):
    path = write(tmp_path, **SMALL)
    assert main([experiment, "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / produced).exists()
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["experiment"] == experiment


def test_duality_runs(tmp_path):
    path = write(tmp_path, **{**SMALL, "L": 3.0, "environment": {**BASE["environment"], "intensity": 2.0}})
    assert main(["duality", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "duality.csv").read_text().splitlines()
    assert rows[0] == "node,mc_mean,predicted,stderr,residual"


def test_runtime_error_names_module(tmp_path, capsys):
    # isolated points with a short-range kernel: the corrector problem is singular
    env = {"kind": "poisson", "d": 1, "intensity": 0.2, "marks": {"kind": "constant", "value": 0.0}}
    path = write(tmp_path, environment=env, kernel={"kind": "constant_range", "c0": 1.0, "R": 0.5}, L=50.0)
    assert main(["effective-d", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    rec = error_record(capsys)
    assert rec["error"] == "runtime" and rec["module"] == "effective"
    assert (tmp_path / "o" / "error.json").exists()


def test_threads_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("HOPLAB_THREADS", "3")
    path = write(tmp_path, **SMALL)
    assert main(["sample", "--config", str(path), "--out", str(tmp_path / "o"), "--threads", "1"]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["meta"]["threads"] == 3
