import numpy as np
import pytest

from thinspec import config as cfgmod
from thinspec.cli import main, read_csv, run_pipeline
from thinspec.config import config_from_dict, read_keyvalues, write_keyvalues
from thinspec.errors import ConfigError, HypothesisViolation

from conftest import H_STRIP, PI2

SMALL = f"""
name = small
problem.F = {H_STRIP}   # h-strip
problem.A.a11 = 1
problem.A.a12 = 0
problem.A.a21 = 0
problem.A.a22 = 1
grid.cell.n1 = 32
grid.cell.n2 = 32
grid.thin.nodes_per_period = 16
profile.m = 9
validate.eps_list = 0.25, 0.2, 0.15
validate.k = 1
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def _kv(**over):
    kv = read_keyvalues(SMALL)
    kv.update(over)
    return kv


def test_keyvalue_parsing():
    kv = read_keyvalues("# comment\na = 1  # trailing\n\nb.c = x, y\n")
    assert kv == {"a": "1", "b.c": "x, y"}
    with pytest.raises(ConfigError):
        read_keyvalues("a = 1\na = 2\n")
    with pytest.raises(ConfigError):
        read_keyvalues("just text\n")


def test_config_validation():
    cfg = config_from_dict(_kv())
    assert cfg.thin.n2 == cfg.cell.n2 == 32
    assert cfg.eps_list == (0.25, 0.2, 0.15)
    with pytest.raises(ConfigError):
        config_from_dict(_kv(**{"problem.A.a21": "0.1*y1"}))
    with pytest.raises(ConfigError):
        config_from_dict(_kv(**{"validate.eps_list": "0.1, 0.2, 0.05"}))
    with pytest.raises(ConfigError):
        config_from_dict(_kv(**{"problem.F": "y2*(1-"}))
    with pytest.raises(ConfigError):
        config_from_dict(_kv(**{"grid.cell.nn": "3"}))
    kv = _kv()
    del kv["problem.F"]
    with pytest.raises(ConfigError):
        config_from_dict(kv)


def test_equal_but_differently_written_cross_terms_accepted():
    cfg = config_from_dict(_kv(**{"problem.A.a12": "0.1*sin(2*pi*y1)",
                                  "problem.A.a21": "sin(2*pi*y1)/10"}))
    assert cfg.A.has_cross


def test_bundled_configs_load():
    names = cfgmod.bundled_names()
    assert {"h-strip", "flat-strip", "two-bump", "shifted", "monotone"} <= set(names)
    for n in names:
        cfgmod.load(n)


def test_keyvalue_reals_round_trip(tmp_path):
    vals = [np.pi, 1 / 3, 1e-300, -2.5e17]
    write_keyvalues(tmp_path / "m.txt", [("v", vals), ("x", 0.1)])
    kv = read_keyvalues((tmp_path / "m.txt").read_text())
    assert [float(s) for s in kv["v"].split(",")] == vals
    assert float(kv["x"]) == 0.1
    assert b"\r" not in (tmp_path / "m.txt").read_bytes()


def test_cell_eigen_stage(tmp_path):
    out = tmp_path / "o"
    assert main(["cell-eigen", "--config", "h-strip", "--x1", "0.25", "--out", str(out)]) == 0
    rows = read_csv(out / "cell_eigen.csv")
    assert len(rows) == 1
    assert float(rows[0]["mu1"]) == pytest.approx(PI2 / 0.96875 ** 2, rel=1e-3)


def test_oscillator_stage_from_model_file(tmp_path, small_cfg):
    out = tmp_path / "o"
    out.mkdir()
    write_keyvalues(out / "model.txt", [
        ("verdict", "satisfied"), ("x_star", 0.0), ("mu0", PI2), ("kappa", 2 * PI2),
        ("a_eff", 1.0), ("A_eff_full", [1.0, 0.0, 0.0, 0.0]), ("c_eff", 0.0)])
    assert main(["oscillator", "--config", str(small_cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "oscillator.csv")
    assert float(rows[0]["nu"]) == pytest.approx(3.14159, abs=1e-5)


def test_missing_artifacts(tmp_path, small_cfg, capsys):
    out = str(tmp_path / "empty")
    for stage in ("validate", "minimize", "effective", "oscillator", "predict"):
        assert main([stage, "--config", str(small_cfg), "--out", out]) == 1
        assert "MissingArtifact" in capsys.readouterr().err


def test_hypothesis_gate_exit_code(tmp_path, capsys):
    assert main(["run", "--config", "flat-strip", "--out", str(tmp_path / "f")]) == 2
    assert "violated(flat)" in capsys.readouterr().out
    text = (tmp_path / "f" / "report.txt").read_text()
    assert "verdict = violated(flat)" in text


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL.replace("problem.A.a21 = 0", "problem.A.a21 = y2"))
    assert main(["profile", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "ConfigError" in capsys.readouterr().err


def test_stages_are_resumable_and_deterministic(tmp_path, small_cfg):
    out = tmp_path / "run"
    cfg = cfgmod.load(str(small_cfg))
    rep = run_pipeline(cfg, out)
    assert rep.verdict == "satisfied"
    first = {p.name: p.read_bytes() for p in out.iterdir() if p.is_file()}
    (out / "validation.csv").unlink()
    (out / "report.txt").unlink()
    assert main(["validate", "--config", str(small_cfg), "--out", str(out)]) == 0
    for name in ("validation.csv", "report.txt"):
        assert (out / name).read_bytes() == first[name]
    assert main(["minimize", "--config", str(small_cfg), "--out", str(out)]) == 0
    assert (out / "minimize.csv").read_bytes() == first["minimize.csv"]
    header = first["validation.csv"].split(b"\n")[0]
    assert header == b"eps,i,lambda,prediction,nu_residual,localization_error"


def test_pipeline_raises_for_violation(tmp_path):
    with pytest.raises(HypothesisViolation):
        run_pipeline(cfgmod.load("monotone"), tmp_path / "m")
    assert "violated(boundary)" in (tmp_path / "m" / "report.txt").read_text()
