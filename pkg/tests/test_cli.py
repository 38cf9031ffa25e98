import json
import subprocess
import sys

import pytest

from shrinkerlab import cli
from shrinkerlab.errors import ValidationError


def run_cli(args, tmp_path, env=None):
    import os

    e = dict(os.environ)
    e.pop("SHRINKERLAB_OUTPUT", None)
    e.update(env or {})
    return subprocess.run([sys.executable, "-m", "shrinkerlab.cli", *args], capture_output=True, text=True,
                          cwd=tmp_path, env=e)


def test_spectrum_command(tmp_path):
    out = tmp_path / "spec"
    p = run_cli(["spectrum", "--base", "sphere", "--n", "2", "--m", "800", "--count", "4",
                 "--output-dir", str(out)], tmp_path)
    assert p.returncode == 0, p.stderr
    data = json.loads((out / "spectrum.json").read_text())
    assert all(abs(a - b) < 1e-3 for a, b in zip(data["lambdas"], [-1, -0.5, 0.5, 2]))
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) >= {"spectrum.json", "eigenfunctions.csv", "audits.json"}
    assert man["version"] and len(man["config_digest"]) == 64


def test_flow_command(tmp_path):
    out = tmp_path / "flow"
    p = run_cli(["flow", "--base", "sphere", "--u0", "const:0.01", "--span", "1", "--output-dir", str(out)], tmp_path)
    assert p.returncode == 0, p.stderr
    audits = json.loads((out / "audits.json").read_text())
    orc = next(a for a in audits if a["name"] == "radial_oracle")
    assert orc["passed"] and orc["constants"]["max_relative_error"] < 0.01
    assert (out / "trajectory.csv").read_text().startswith("tau,node,u,H,v,2tH_plus_xnu")


def test_malformed_config(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"command": "spectrum", "params": {"mesh": 3}}))
    p = run_cli(["spectrum", "--config", str(cfg)], tmp_path)
    assert p.returncode == 1
    err = json.loads(p.stderr.strip().splitlines()[-1])
    assert err["error"] == "ValidationError" and "mesh" in err["message"]


def test_not_json(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert run_cli(["soliton", "--config", str(cfg)], tmp_path).returncode == 1


def test_unknown_flag(tmp_path):
    p = run_cli(["soliton", "--nonsense", "1"], tmp_path)
    assert p.returncode == 1 and json.loads(p.stderr)["exit_code"] == 1


def test_numerical_failure_exit(tmp_path):
    # a bracket that does not straddle a closed orbit
    p = run_cli(["soliton", "--base", "torus", "--n", "4", "--m", "100", "--output-dir", "x"], tmp_path)
    assert p.returncode in (1, 2)


def test_audit_failure_exit(tmp_path):
    p = run_cli(["soliton", "--base", "torus", "--m", "40", "--output-dir", "t"], tmp_path)
    assert p.returncode == 3


def test_env_override(tmp_path):
    p = run_cli(["soliton", "--m", "64", "--output-dir", "ignored"], tmp_path, {"SHRINKERLAB_OUTPUT": "viaenv"})
    assert p.returncode == 0
    assert (tmp_path / "viaenv" / "manifest.json").exists() and not (tmp_path / "ignored").exists()


def test_formats(tmp_path):
    p = run_cli(["soliton", "--m", "64", "--formats", "json", "--output-dir", "o"], tmp_path)
    assert p.returncode == 0
    assert not (tmp_path / "o" / "profile.csv").exists()


def test_report(tmp_path):
    assert run_cli(["soliton", "--m", "64", "--output-dir", "a"], tmp_path).returncode == 0
    assert run_cli(["soliton", "--base", "torus", "--m", "40", "--output-dir", "b"], tmp_path).returncode == 3
    ok = run_cli(["report", "a", "--output-dir", "r1"], tmp_path)
    assert ok.returncode == 0 and "overall" in ok.stdout
    bad = run_cli(["report", "a", "b", "--output-dir", "r2"], tmp_path)
    assert bad.returncode == 3
    rep = json.loads((tmp_path / "r2" / "report.json").read_text())
    assert rep["status"] == "fail"
    assert rep["details"]["failing"][0]["audit"] == "soliton:shrinker_residual"
    assert rep["details"]["failing"][0]["checks"] == ["residual"]
    assert run_cli(["report"], tmp_path).returncode == 1
    assert run_cli(["report", "missing"], tmp_path).returncode == 1


def test_determinism(tmp_path):
    for d in ("r1", "r2"):
        assert run_cli(["avoid", "--seed", "7", "--output-dir", d], tmp_path).returncode == 0
    for name in ("summary.json", "witness.json", "audits.json", "manifest.json", "distances.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


class TestResolve:
    def test_defaults_and_coercion(self):
        cfg = cli.resolve_config({"command": "flow", "params": {"m": "32", "span": "2"}})
        assert cfg["params"]["m"] == 32 and cfg["params"]["span"] == 2.0
        assert cfg["params"]["dtau"] == 1e-3

    @pytest.mark.parametrize("raw", [
        {"command": "nope"},
        {"command": "flow", "seed": "x"},
        {"command": "flow", "formats": ["xml"]},
        {"command": "flow", "params": {"m": 1.5}},
        {"command": "flow", "params": {"refine": 1}},
        {"command": "flow", "extra": 1},
        [],
    ])
    def test_rejects(self, raw):
        with pytest.raises(ValidationError):
            cli.resolve_config(raw)

    def test_digest_stable(self):
        a = cli.resolve_config({"command": "flow", "params": {"m": 32}})
        b = cli.resolve_config({"command": "flow", "params": {"m": 32.0}})
        assert cli.config_digest(a) == cli.config_digest(b)
