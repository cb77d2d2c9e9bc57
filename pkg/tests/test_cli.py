import csv
import json
from fractions import Fraction
from pathlib import Path

import pytest

from nsnormal.cli import main

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


def load(path):
    return json.loads(Path(path).read_text())


def run(*argv):
    return main([str(a) for a in argv])


def test_classify_spectrum_a(tmp_path):
    assert run("classify", SAMPLES / "spectral_a.json", "--ell", 2, "--blocks", "1,1",
               "--out-dir", tmp_path) == 0
    data = load(tmp_path / "classify.json")
    assert data["r_min"] == 3 and len(data["plus_basis"]) == 8
    rows = list(csv.DictReader((tmp_path / "plus_basis.csv").open()))
    assert len(rows) == 8 and sum(int(r["resonant"]) for r in rows) == 3
    assert (tmp_path / "manifest_classify.json").exists()


def test_classify_spectrum_b(tmp_path):
    assert run("classify", SAMPLES / "spectral_b.json", "--ell", 0, "--blocks", "1,1",
               "--out-dir", tmp_path) == 0
    data = load(tmp_path / "classify.json")
    assert len(data["plus_basis"]) == 1 and data["plus_basis"][0]["resonant"]


def test_classify_bad_input(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    assert run("classify", empty, "--out-dir", tmp_path / "o") == 2
    assert run("classify", tmp_path / "missing.json", "--out-dir", tmp_path / "o") == 2
    assert not (tmp_path / "o" / "classify.json").exists()
    assert run("classify") == 2


def test_classify_invariant_violation(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"chi": [{"units": {"log2": 1}}, {"units": {"log2": -1}}], "m_s": 1}))
    assert run("classify", bad, "--ell", 1, "--out-dir", tmp_path / "o") == 3


def test_margin_spectrum_c(tmp_path):
    assert run("margin", SAMPLES / "spectral_c.json", "--ell", 1, "--out-dir", tmp_path) == 0
    data = load(tmp_path / "margin.json")
    assert data["resonant"] == [] and data["eps_max_float"] > 0


def test_solve_spectrum_b_constant(tmp_path):
    assert run("solve", "--scenario", SAMPLES / "scenario_b_constant.json", "--out-dir", tmp_path) == 0
    res = load(tmp_path / "result.json")
    coeffs = {(c["comp"], tuple(c["alpha"])): Fraction(c["value"]) for c in res["h"][0]["coeffs"]}
    assert list(coeffs) == [(0, (1, 1))]
    assert abs(coeffs[(0, (1, 1))] - 8) < Fraction(1, 10 ** 6)
    assert abs(res["diagnostics"]["rate"] - 0.5) < 1e-9
    rows = list(csv.DictReader((tmp_path / "convergence.csv").open()))
    assert len(rows) == len(res["diagnostics"]["deltas"])


def test_solve_linear_scenario(tmp_path):
    scen = load(SAMPLES / "scenario_b_constant.json")
    scen["params"]["base"]["coeffs"] = []
    path = tmp_path / "linear.json"
    path.write_text(json.dumps(scen))
    assert run("solve", "--scenario", path, "--out-dir", tmp_path / "o") == 0
    res = load(tmp_path / "o" / "result.json")
    assert all(e["coeffs"] == [] for e in res["h"])


def test_solve_band_violation(tmp_path):
    assert run("solve", "--scenario", SAMPLES / "scenario_band_violation.json",
               "--out-dir", tmp_path) == 5
    assert not (tmp_path / "result.json").exists()


def test_solve_no_convergence(tmp_path):
    assert run("solve", "--scenario", SAMPLES / "scenario_b_constant.json", "--tol", "1e-40",
               "--N-max", 30, "--out-dir", tmp_path) == 4


@pytest.fixture
def solved(tmp_path):
    out = tmp_path / "solve"
    assert run("solve", "--scenario", SAMPLES / "scenario_a_random.json", "--out-dir", out) == 0
    return out


def test_verify_fresh_output(solved, tmp_path):
    assert run("verify", solved / "cocycle.json", solved / "result.json", "--out-dir", tmp_path / "v") == 0
    report = load(tmp_path / "v" / "verify.json")
    assert report["residual"] == "0"
    assert report["rays"]["full_ok"] and report["rays"]["pure_y_ok"]
    assert set(report["membership"]) == {"G_PLUS_Z"}
    assert (tmp_path / "v" / "residual_fits.csv").exists()
    assert (tmp_path / "v" / "membership.csv").exists()


def test_verify_tampered(solved, tmp_path):
    res = load(solved / "result.json")
    res["h"][3]["coeffs"].append({"comp": 0, "alpha": [2, 0], "value": "1/1000"})
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(res))
    assert run("verify", solved / "cocycle.json", bad, "--out-dir", tmp_path / "v") == 1
    assert Fraction(load(tmp_path / "v" / "verify.json")["residual"]) >= Fraction(1, 10 ** 4)


def test_verify_mismatch(solved, tmp_path):
    other = tmp_path / "other"
    assert run("solve", "--scenario", SAMPLES / "scenario_b_constant.json", "--out-dir", other) == 0
    assert run("verify", other / "cocycle.json", solved / "result.json", "--out-dir", tmp_path / "v") == 6


def test_gauge(solved, tmp_path):
    out = tmp_path / "g"
    assert run("gauge", solved / "result.json", "--seed", 5, "--out-dir", out) == 0
    report = load(out / "gauge.json")
    assert report["passed"] == 10 and report["identity_noop"]
    again = tmp_path / "g2"
    assert run("gauge", solved / "result.json", "--seed", 5, "--out-dir", again) == 0
    assert (out / "gauge.json").read_bytes() == (again / "gauge.json").read_bytes()


def test_generate_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--scenario", SAMPLES / "scenario_a_random.json",
                   "--out-dir", tmp_path / name) == 0
    assert (tmp_path / "a" / "cocycle.json").read_bytes() == (tmp_path / "b" / "cocycle.json").read_bytes()


def test_pipeline_rerun_from_manifest(tmp_path):
    first = tmp_path / "first"
    assert run("solve", "--scenario", SAMPLES / "scenario_a_skew.json", "--out-dir", first) == 0
    manifest = load(first / "manifest_solve.json")
    assert run("batch", "--manifest", first / "manifest_solve.json", "--out-dir", tmp_path / "re") == 0
    rerun = load(tmp_path / "re" / "solve" / "manifest_solve.json")
    assert rerun["outputs"]["result.json"] == manifest["outputs"]["result.json"]
    assert rerun["outputs"]["cocycle.json"] == manifest["outputs"]["cocycle.json"]


def test_batch_jobs(tmp_path):
    jobs = {"jobs": [
        {"name": "cls", "argv": ["classify", str(SAMPLES / "spectral_a.json"), "--ell", "2"]},
        {"name": "bad", "argv": ["solve", "--scenario", str(SAMPLES / "scenario_band_violation.json")]},
    ]}
    path = tmp_path / "jobs.json"
    path.write_text(json.dumps(jobs))
    assert run("batch", "--manifest", path, "--out-dir", tmp_path / "out") == 5
    rows = list(csv.DictReader((tmp_path / "out" / "batch.csv").open()))
    assert [(r["name"], r["exit_code"]) for r in rows] == [("cls", "0"), ("bad", "5")]
