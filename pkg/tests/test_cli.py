import json

import numpy as np
import pytest

from fracmap.cli import main
from fracmap.fieldio import read_dump


def report(path):
    return json.loads((path / "report.json").read_text())


def test_constants_command(tmp_path):
    assert main(["constants", "--n", "2", "--s", "0.5", "--out", str(tmp_path)]) == 0
    res = report(tmp_path)["results"]
    assert res["gamma_ns"] == pytest.approx(0.1591549430918953, rel=1e-14)
    assert res["delta_s"] == pytest.approx(1.0, rel=1e-14)
    assert res["alpha"] == pytest.approx(2.0, rel=1e-12)


def test_check_default_passes(tmp_path):
    assert main(["check", "--out", str(tmp_path)]) == 0
    rep = report(tmp_path)
    assert rep["config"]["params"]["n"] == 1 and rep["config"]["params"]["s"] == 0.5
    assert all(v["residual"] <= 1e-11 for v in rep["results"]["identities"].values())


def test_check_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"options": {"tol": 1e-40}}))
    assert main(["check", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize("cfg", [{"bogus": 1}, {"extension": {"levels": 2}}, {"preset": {"name": "nope"}}])
def test_config_errors(tmp_path, cfg):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["energy", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_runtime_config_error_writes_report(tmp_path):
    assert main(["energy", "--preset", "hedgehog", "--n", "1", "--out", str(tmp_path)]) == 2
    assert report(tmp_path)["error"]["type"] == "ConfigError"


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["minimize", "--frobnicate"])
    assert exc.value.code == 2


def test_numerical_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"solver": {"initial_step": 1e8, "max_backtracks": 1, "bb_steps": False},
                               "preset": {"name": "random-perturbation"}, "params": {"d": 3}}))
    assert main(["minimize", "--config", str(cfg), "--h", "0.0625", "--out", str(tmp_path / "o")]) == 3
    assert report(tmp_path / "o")["error"]["type"] == "numerical"


def run_min(out, threads="2"):
    args = ["minimize", "--preset", "random-perturbation", "--d", "2", "--h", "0.0625", "--seed", "3",
            "--threads", threads, "--out", str(out)]
    assert main(args) == 0
    return report(out)


def test_minimize_artifacts_and_determinism(tmp_path):
    a = run_min(tmp_path / "a")
    b = run_min(tmp_path / "b")
    hist = a["results"]["solve"]["energy_history"]
    assert all(y <= x for x, y in zip(hist, hist[1:]))
    assert (tmp_path / "a" / "field.bin").read_bytes() == (tmp_path / "b" / "field.bin").read_bytes()
    a.pop("timing"), b.pop("timing")
    a["config"].pop("out"), b["config"].pop("out")
    assert a == b
    _, u = read_dump(tmp_path / "a" / "field.bin")
    assert np.max(np.abs(np.linalg.norm(u, axis=-1) - 1)) < 1e-12
    assert (tmp_path / "a" / "field.csv").exists()


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACMAP_THREADS", "3")
    assert main(["constants", "--out", str(tmp_path)]) == 0
    assert report(tmp_path)["config"]["threads"] == 3


def test_extend_replace_roundtrip(tmp_path):
    base = ["--n", "1", "--s", "0.5", "--d", "2", "--preset", "smooth", "--h", "0.125"]
    assert main(["extend", *base, "--out", str(tmp_path / "x")]) == 0
    assert main(["replace", "--input", str(tmp_path / "x" / "extension.bin"), "--out", str(tmp_path / "r")]) == 0
    res = report(tmp_path / "r")["results"]
    assert res["energy_not_increased"] and res["max_principle"]


def test_density_singular_blowup_perimeter(tmp_path):
    base = ["--n", "2", "--s", "0.5", "--h", "0.125"]
    assert main(["density", *base, "--preset", "hedgehog", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "profile.csv").read_text().startswith("r,Theta")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"options": {"epsilon": 1e-3}}))
    assert main(["singular", *base, "--preset", "constant", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert report(tmp_path / "s")["results"]["flagged_count"] == 0
    assert main(["blowup", *base, "--preset", "step", "--out", str(tmp_path / "b")]) == 0
    assert report(tmp_path / "b")["results"]["blowups"][0]["symmetry_dimension"] == 1
    assert main(["perimeter", *base, "--d", "1", "--preset", "char-ball", "--out", str(tmp_path / "p")]) == 0
    assert report(tmp_path / "p")["results"]["energy_over_gamma_P"] == pytest.approx(2.0, rel=1e-12)
