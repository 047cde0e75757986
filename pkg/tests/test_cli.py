import json
import shutil
import subprocess
import sys

import pytest

from regencouple.cli import main, parse_horizons
from regencouple.errors import ConfigError
from regencouple.report import strip_metadata

MOMENTS_TOML = """
[model.moments]
d = 1
mean_xi = [3.0]
mean_tau = 2.0
cov_xi = [[4.0]]
var_tau = 2.0
cov_xi_tau = [1.0]
"""


def run(args, out):
    return main(list(args) + ["--out", str(out), "-q"])


def read(path):
    return json.loads(path.read_text())


def test_parse_horizons():
    assert parse_horizons("256, 2^10") == [256.0, 1024.0]
    with pytest.raises(ConfigError):
        parse_horizons("256,abc")
    with pytest.raises(ConfigError):
        parse_horizons("2")


def test_params_gaussian_unit(fixtures_dir, tmp_path):
    assert run(["params", "--config", str(fixtures_dir / "gaussian_unit.json")], tmp_path) == 0
    doc = read(tmp_path / "params.json")
    assert doc["verdict"] == "PASS" and doc["seed"] == 3
    assert doc["numbers"]["kappa"][0] == pytest.approx(0.0, abs=1e-12)
    assert doc["numbers"]["sigma2"][0][0] == pytest.approx(1.0)
    man = read(tmp_path / "manifest.json")
    assert man["command"] == "params" and man["outputs"] == ["params.json"] and len(man["config_digest"]) == 64


def test_params_moments(tmp_path):
    cfg = tmp_path / "m.toml"
    cfg.write_text(MOMENTS_TOML)
    assert run(["params", "--config", str(cfg)], tmp_path / "o") == 0
    n = read(tmp_path / "o" / "params.json")["numbers"]
    assert n["kappa"][0] == pytest.approx(1.5) and n["sigma2"][0][0] == pytest.approx(2.75)
    assert n["moments_source"] == "given"


def test_params_birth_death(fixtures_dir, tmp_path):
    assert run(["params", "--config", str(fixtures_dir / "mm1.toml")], tmp_path) == 0
    assert read(tmp_path / "params.json")["numbers"]["kappa"][0] == pytest.approx(1.0)


def test_bd_fixtures(fixtures_dir, tmp_path):
    assert run(["bd", "--config", str(fixtures_dir / "mm_inf.toml")], tmp_path / "inf") == 0
    n = read(tmp_path / "inf" / "bd.json")["numbers"]
    assert n["sigma_f2"]["value"] == pytest.approx(2.0, abs=1e-3)
    assert n["kappa_f"]["value"] == pytest.approx(1.0)
    assert (tmp_path / "inf" / "trajectory.csv").exists()
    assert run(["bd", "--config", str(fixtures_dir / "mm1.toml")], tmp_path / "mm1") == 0
    n = read(tmp_path / "mm1" / "bd.json")["numbers"]
    assert n["kappa_f"]["value"] == pytest.approx(1.0) and n["sigma_f2"]["value"] == pytest.approx(12.0)
    assert abs(n["ssa"]["mean_tau"] - n["ssa"]["mean_tau_exact"]) < 4 * n["ssa"]["mean_tau_se"]


def test_bd_divergent_reports_cleanly(fixtures_dir, tmp_path, caplog):
    assert run(["bd", "--config", str(fixtures_dir / "divergent.toml")], tmp_path) == 3
    doc = read(tmp_path / "bd.json")
    assert doc["verdict"] == "ERROR" and doc["numbers"]["error"]["type"] == "NotSummable"
    assert doc["numbers"]["exp_moment"]["verdict"] == "FAIL"
    assert "NotSummable" in caplog.text


@pytest.mark.parametrize("text,field", [
    ('[model]\nbuiltin = "nope"\n', "model.builtin"),
    ('[model.birth_death]\nbirth = "1"\ndeath = [1, "x"]\nn_max = 5\n', "model.birth_death.death[1]"),
    ('[model.birth_death]\nbirth = "1 +"\ndeath = "2"\nn_max = 5\n', "model.birth_death.birth"),
    ('seed = -3\n[model]\nbuiltin = "degenerate"\n', "seed"),
    ('[couple]\nreplicates = 5\n', "model"),
    ("seed = = 1\n", "line 1"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, field):
    cfg = tmp_path / "c.toml"
    cfg.write_text(text)
    assert run(["params", "--config", str(cfg)], tmp_path / "o") == 2
    assert field in capsys.readouterr().err


def test_flag_errors_exit_2(fixtures_dir, tmp_path):
    cfg = str(fixtures_dir / "mm1.toml")
    assert run(["bd", "--config", cfg, "--seed", "-1"], tmp_path) == 2
    assert run(["bd", "--config", cfg, "--threads", "0"], tmp_path) == 2
    assert run(["verify", "--criteria", "11"], tmp_path) == 2
    with pytest.raises(SystemExit) as e:
        main(["params"])
    assert e.value.code == 2


def _couple(cfg, out, threads):
    args = ["couple", "--config", cfg, "--horizons", "16,32,64,128", "--replicates", "50", "--threads", str(threads)]
    return run(args, out)


def test_couple_reproducible_across_threads(fixtures_dir, tmp_path):
    cfg = str(fixtures_dir / "stopped_sum_lattice.toml")
    _couple(cfg, tmp_path / "a", 1)
    _couple(cfg, tmp_path / "b", 3)
    for name in ("rate_fit.json",):
        assert strip_metadata(read(tmp_path / "a" / name)) == strip_metadata(read(tmp_path / "b" / name))
    assert (tmp_path / "a" / "phi.csv").read_bytes() == (tmp_path / "b" / "phi.csv").read_bytes()
    assert (tmp_path / "a" / "summary.txt").read_text() == (tmp_path / "b" / "summary.txt").read_text()
    man_a, man_b = read(tmp_path / "a" / "manifest.json"), read(tmp_path / "b" / "manifest.json")
    assert man_a["config_digest"] == man_b["config_digest"]
    assert man_a["outputs"] == ["phi.csv", "rate_fit.json", "summary.txt"]
    rows = (tmp_path / "a" / "phi.csv").read_text().splitlines()
    assert rows[0].split(",")[:3] == ["replicate", "t", "phi_1"] and len(rows) == 201


def test_couple_seed_changes_results(fixtures_dir, tmp_path):
    cfg = str(fixtures_dir / "stopped_sum_lattice.toml")
    run(["couple", "--config", cfg, "--horizons", "16,32,64,128", "--replicates", "50"], tmp_path / "a")
    run(["couple", "--config", cfg, "--horizons", "16,32,64,128", "--replicates", "50", "--seed", "2"], tmp_path / "b")
    assert (tmp_path / "a" / "phi.csv").read_bytes() != (tmp_path / "b" / "phi.csv").read_bytes()


@pytest.mark.slow
@pytest.mark.parametrize("name,verdict", [
    ("stopped_sum_lattice.toml", "LOG-CONSISTENT"),
    ("degenerate.toml", "LOG-CONSISTENT"),
    ("independent_null.toml", "NOT-LOG-CONSISTENT"),
])
def test_couple_fixtures(fixtures_dir, tmp_path, name, verdict):
    assert run(["couple", "--config", str(fixtures_dir / name), "--threads", "4"], tmp_path) == 0
    doc = read(tmp_path / "rate_fit.json")
    assert doc["verdict"] == verdict and doc["numbers"]["triangle_all_ok"]
    assert (tmp_path / "tail.csv").exists() is False or doc["numbers"]["rate_fit"]["tail"] is not None


def test_verify_single_criterion(tmp_path, capsys):
    assert run(["verify", "--criteria", "1"], tmp_path) == 0
    assert "acceptance  1 PASS" in capsys.readouterr().out
    doc = read(tmp_path / "acceptance_1.json")
    assert doc["seed"] == 12345 and doc["verdict"] == "PASS"
    assert read(tmp_path / "verify.json")["numbers"]["results"] == {"1": "PASS"}


@pytest.mark.parametrize("suite", ["planted_signal", "planted_null"])
def test_verify_planted(tmp_path, suite):
    assert run(["verify", "--suite", suite], tmp_path) == 0
    assert read(tmp_path / f"{suite}.json")["verdict"] == "PASS"


def test_selftest(tmp_path, capsys):
    assert run(["selftest"], tmp_path) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    assert read(tmp_path / "selftest.json")["verdict"] == "PASS"


def test_console_script(tmp_path):
    exe = shutil.which("regencouple")
    cmd = [exe] if exe else [sys.executable, "-m", "regencouple.cli"]
    res = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
