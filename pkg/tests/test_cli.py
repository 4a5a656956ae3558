import json
import os

import pytest

from tpwave.cli import main
from tpwave.config import ConfigError, config_hash, load_config

ROOT = os.path.dirname(os.path.dirname(__file__))
QUICK = os.path.join(ROOT, "configs", "quick.toml")


def _toml(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_and_resolved_dump():
    cfg = load_config()
    d = cfg.resolved()
    assert d["solver"]["sigma"] == pytest.approx(1.5) and d["solver"]["beta"] == pytest.approx(16)
    assert len(config_hash(cfg)) == 64
    assert config_hash(cfg) == config_hash(load_config())


@pytest.mark.parametrize("text", [
    "[problem\n", "[bogus]\nx = 1\n", "[problem]\nomega = 'fast'\n", "[problem]\nwhat = 1\n",
    "[spectrum]\nn_modes = 4.5\n", "[scan]\neps_range = [0.002, 0.001]\n",
    "[scan]\ngamma1 = 1.5\n", "[solver]\ntau = 2.5\n", "[problem]\nomega = -1.0\n"])
def test_config_errors(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_toml(tmp_path, text))


def test_exit_code_for_config_error(tmp_path, capsys):
    assert main(["spectrum", "--config", _toml(tmp_path, "[problem\n"),
                 "--out-dir", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err
    bad = _toml(tmp_path, '[problem]\npreset = "nope"\n', "p.toml")
    assert main(["spectrum", "--config", bad, "--out-dir", str(tmp_path / "o")]) == 2


def test_spectrum_command(tmp_path):
    out = tmp_path / "s"
    assert main(["spectrum", "--config", QUICK, "--out-dir", str(out), "--dump-transform"]) == 0
    lines = (out / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "n,mu_n,lambda_n,asymptotic_residual,oscillation_count"
    assert len(lines) == 42
    n, mu = lines[3].split(",")[:2]
    assert float(mu) == pytest.approx(int(n) ** 2 + 1, abs=1e-8)
    assert (out / "transform.csv").read_text().startswith("x,xi,s_factor,Q,varrho")
    man = json.loads((out / "manifest.json").read_text())
    assert man["commands"]["spectrum"]["exit_status"] == 0
    assert "spectrum.csv" in man["commands"]["spectrum"]["artifacts"]


def test_solve_resume_matches_uninterrupted(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["solve", "--config", QUICK, "--out-dir", a]) == 0
    assert main(["solve", "--config", QUICK, "--out-dir", b, "--stages", "1"]) == 0
    assert main(["solve", "--config", QUICK, "--out-dir", b, "--resume"]) == 0
    sa = open(os.path.join(a, "solution.csv"), "rb").read()
    assert sa == open(os.path.join(b, "solution.csv"), "rb").read()
    recs = [json.loads(x) for x in open(os.path.join(a, "ledger.jsonl"))]
    assert [r["N_n"] for r in recs] == [8, 22, 32, 32]
    man = json.loads(open(os.path.join(a, "manifest.json")).read())
    assert set(man["commands"]) == {"solve"}


def test_resume_refuses_other_parameters(tmp_path):
    out = str(tmp_path / "r")
    assert main(["solve", "--config", QUICK, "--out-dir", out, "--stages", "0"]) == 0
    other = _toml(tmp_path, open(QUICK).read().replace("N_cap = 32", "N_cap = 24"), "o.toml")
    assert main(["solve", "--config", other, "--out-dir", out, "--resume"]) == 2


def test_regime_failure_exit_code(tmp_path):
    cfg = _toml(tmp_path, '[problem]\nomega = 3.1622776601683795\n'
                          '[solver]\nN_cap = 32\ngrid_size = 1024\nn_max = 1\n')
    assert main(["solve", "--config", cfg, "--out-dir", str(tmp_path / "x")]) == 3
    assert main(["solve", "--out-dir", str(tmp_path / "y")]) == 3


def test_resonance_scan_is_deterministic(tmp_path):
    cfg = _toml(tmp_path, "[scan]\ngrid = [20, 100]\n")
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["resonance-scan", "--config", cfg, "--out-dir", a]) == 0
    assert main(["resonance-scan", "--config", cfg, "--out-dir", b]) == 0
    for name in ("scan.csv", "intervals_0.csv"):
        assert open(os.path.join(a, name), "rb").read() == open(os.path.join(b, name), "rb").read()


def test_verify_and_report(tmp_path):
    cfg = _toml(tmp_path, "[verify]\nsamples = 20\n")
    out = tmp_path / "v"
    assert main(["verify", "--config", cfg, "--out-dir", str(out), "--seed", "3"]) == 0
    rows = (out / "verify.csv").read_text().splitlines()
    assert rows[0] == "suite,status,value,threshold"
    assert all(",pass," in r for r in rows[1:])
    strict = _toml(tmp_path, "[verify]\nsamples = 20\ntolerance_scale = 1e-9\n", "s.toml")
    assert main(["verify", "--config", strict, "--out-dir", str(tmp_path / "w")]) == 1
    assert main(["report", "--config", QUICK, "--out-dir", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert rep["in_A0"] and rep["omega_min_empirical"] < 2.5 and rep["trust_radius"] == 1.0


def test_report_eps_probe(tmp_path):
    out = tmp_path / "p"
    assert main(["report", "--config", QUICK, "--out-dir", str(out), "--probe-eps",
                 "0.002,0.001"]) == 0
    lines = (out / "eps_probe.csv").read_text().splitlines()
    assert lines[0] == "epsilon,status,residual_full" and lines[1].startswith("0.001,ok,")
    assert json.loads((out / "report.json").read_text())["largest_workable_eps"] == 0.002
    assert main(["report", "--config", QUICK, "--out-dir", str(out), "--probe-eps", "x"]) == 2
