import filecmp
import json
import math
from pathlib import Path

import numpy as np
import pytest

from avgctl.cli import bundled_config, load_config, main, validate_config
from avgctl.errors import ConfigError
from avgctl.lp import DualSolution
from avgctl.orbits import PeriodicOrbit
from avgctl.synthesis import FeedbackPolicy


def write_config(tmp_path, **changes):
    raw = json.loads(Path(bundled_config("example2.json")).read_text())
    raw.update(changes)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw, indent=1))
    return path


def small_config(tmp_path, **changes):
    base = {"z_grid_size": 6, "N": 3, "degree": 1, "horizon": 5.0, "sweep_horizon": 2.0, "sweep_eps": [0.2, 0.1]}
    base.update(changes)
    return write_config(tmp_path, **base)


def run_cli(args, capsys):
    code = main([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_bundled_example2():
    cfg = load_config(bundled_config("example2.json"))
    assert cfg.epsilon == 0.1 and cfg.discount == 0.1
    assert cfg.y0 == (0.8916, 3.1370)
    assert cfg.z_lo == (-3.0,) and cfg.z_hi == (-2.05,)
    assert cfg.N == 10 and cfg.degree == 5
    assert cfg.problem().z0[0] == pytest.approx(-3.0000707, abs=1e-7)


def test_bundled_example1():
    cfg = load_config(bundled_config("example1.json"))
    assert cfg.model == "rotation_example1"
    assert cfg.z_grid_size == 20


def test_z0_mismatch(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(write_config(tmp_path, z0=[-2.5]))
    assert info.value.field == "z0"


def test_empty_file(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("  \n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 1


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n "schema_version": 1,\n "model": \n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 4


@pytest.mark.parametrize(
    "changes, field",
    [
        ({"colour": "red"}, "colour"),
        ({"N": 0}, "N"),
        ({"epsilon": 1.5}, "epsilon"),
        ({"discount": -0.1}, "discount"),
        ({"y0": [1.0]}, "y0"),
        ({"model": "pendulum"}, "model"),
        ({"schema_version": 2}, "schema_version"),
        ({"basis_kind": "sparse"}, "basis_kind"),
    ],
)
def test_validation_names_field(tmp_path, changes, field):
    with pytest.raises(ConfigError) as info:
        load_config(write_config(tmp_path, **changes))
    assert info.value.field == field


def test_missing_required_key():
    with pytest.raises(ConfigError) as info:
        validate_config({"schema_version": 1, "model": "lotka_volterra_example2", "epsilon": 0.1, "discount": 0.1})
    assert info.value.field == "y0"


def test_config_error_exit(tmp_path, capsys):
    path = tmp_path / "empty.json"
    path.write_text("")
    code, _, err = run_cli(["solve", "--config", path, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert json.loads(err)["error"] == "config-error"


def test_missing_certificate(tmp_path, capsys):
    code, _, err = run_cli(["simulate", "--out", tmp_path / "none"], capsys)
    assert code == 2
    msg = json.loads(err)
    assert msg["error"] == "missing-certificate" and msg["verb"] == "simulate"


def test_example1_orbits(tmp_path, capsys):
    out = tmp_path / "ex1"
    code, stdout, _ = run_cli(["orbit", "--config", bundled_config("example1.json"), "--out", out], capsys)
    assert code == 0
    files = sorted((out / "orbits").glob("orbit_*.csv"))
    assert len(files) == 20
    for f in files:
        assert PeriodicOrbit.from_csv(f).period == pytest.approx(2 * math.pi, abs=1e-6)
    assert (out / "orbits" / "orbits_index.csv").exists()
    assert "orbit_count 20" in stdout


def test_determinism(tmp_path, capsys):
    cfg = small_config(tmp_path)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        for verb in ("solve", "synthesize", "simulate", "sweep"):
            code, _, err = run_cli([verb, "--config", cfg, "--out", out], capsys)
            assert code == 0, err
    names = ["dual_solution.json", "certificate.csv", "acg_tables.csv", "averaged_trajectory.csv",
             "closed_loop_trajectory.csv", "frozen_trajectory.csv", "sweep.csv"]
    for name in names:
        assert filecmp.cmp(outs[0] / name, outs[1] / name, shallow=False), name


def test_overrides(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "o"
    code, stdout, err = run_cli(["solve", "--config", cfg, "--out", out, "--grid", 5, "--tol", 1e-5], capsys)
    assert code == 0, err
    dual = DualSolution.load(out / "dual_solution.json")
    assert dual.z_grid.size == 5
    assert dual.max_violation <= 1e-5
    summary = dict(line.split(" ", 1) for line in (out / "solve_summary.txt").read_text().splitlines())
    assert float(summary["a_MN"]) == dual.value


def test_bad_override(tmp_path, capsys):
    code, _, err = run_cli(["solve", "--config", small_config(tmp_path), "--out", tmp_path / "o", "--eps", 2.0], capsys)
    assert code == 2
    assert json.loads(err)["field"] == "epsilon"


def test_roundtrip_feedback(ex2, ex2_dual, tmp_path):
    path = tmp_path / "dual.json"
    ex2_dual.save(path)
    back = DualSolution.load(path)
    a = FeedbackPolicy(ex2_dual, ex2.model)
    b = FeedbackPolicy(back, ex2.model)
    rng = np.random.default_rng(5)
    ys = rng.uniform(0.05, 5.0, (10_000, 2))
    zs = rng.uniform(-3.0, -2.05, 10_000)
    ua = np.array([a(y, z)[0] for y, z in zip(ys, zs)])
    ub = np.array([b(y, z)[0] for y, z in zip(ys, zs)])
    assert np.array_equal(ua, ub)
