import csv
import json
import math

import pytest

from searchplan.cli import main

from conftest import SCENARIOS


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestValidate:
    def test_valid(self):
        assert run("validate", SCENARIOS / "two_cell.json") == 0

    def test_violation(self, capsys):
        assert run("validate", SCENARIOS / "bad_masses.json") == 1
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1 and "1.1" in out[0]

    def test_malformed(self):
        assert run("validate", SCENARIOS / "malformed.json") == 2

    def test_unknown_key(self, tmp_path):
        doc = json.loads((SCENARIOS / "two_cell.json").read_text())
        doc["extra"] = 1
        p = tmp_path / "s.json"
        p.write_text(json.dumps(doc))
        assert run("validate", p) == 2


class TestPlan:
    def test_two_cell_rows(self, tmp_path):
        out = tmp_path / "plan.csv"
        assert run("plan", SCENARIOS / "two_cell.json", "--times", 0, 2, "--out", out) == 0
        rows = read_csv(out)
        assert [r["effort"] for r in rows[:2]] == ["0", "0"]
        assert rows[2]["location"] == "1" and float(rows[2]["effort"]) == pytest.approx(1.693147, abs=1e-6)
        assert rows[3]["location"] == "2" and float(rows[3]["effort"]) == pytest.approx(0.306853, abs=1e-6)
        assert (tmp_path / "plan.csv.manifest.json").exists()

    def test_nine_digits(self, tmp_path):
        out = tmp_path / "plan.csv"
        run("plan", SCENARIOS / "two_cell.json", "--times", 2, "--out", out)
        assert read_csv(out)[0]["effort"] == "1.69314718"

    def test_circular_rows(self, tmp_path):
        out = tmp_path / "plan.csv"
        assert run("plan", SCENARIOS / "circular_normal.json", "--times", 1, "--out", out) == 0
        rows = read_csv(out)
        assert len(rows) == 300 * 64
        assert rows[0]["location"].startswith("r0:th0")

    def test_bad_times(self):
        assert run("plan", SCENARIOS / "two_cell.json", "--times", 2, 1) == 2

    def test_invalid_scenario_no_output(self, tmp_path):
        out = tmp_path / "plan.csv"
        assert run("plan", SCENARIOS / "bad_masses.json", "--out", out) == 1
        assert not out.exists()


class TestEval:
    def test_two_cell(self, tmp_path):
        out = tmp_path / "eval.csv"
        assert run("eval", SCENARIOS / "two_cell.json", "--times", 1, 2, "--out", out) == 0
        rows = read_csv(out)
        assert float(rows[1]["P_true"]) == pytest.approx(0.816060, abs=1e-6)
        assert rows[-1]["t"] == "inf" and float(rows[-1]["mu_true"]) == pytest.approx(1.25, abs=1e-8)

    def test_misspecified(self, tmp_path):
        out = tmp_path / "eval.csv"
        assert run("eval", SCENARIOS / "misspecified.json", "--out", out) == 0
        rows = read_csv(out)
        assert all(float(r["P_true"]) == 0 for r in rows[:-1])
        assert rows[-1]["mu_true"] == "diverged"

    def test_missing_x0(self, tmp_path):
        out = tmp_path / "eval.csv"
        assert run("eval", SCENARIOS / "no_true_location.json", "--out", out) == 4
        assert not out.exists()
        assert run("eval", SCENARIOS / "no_true_location.json", "--subjective-only", "--out", out) == 0
        assert read_csv(out)[0]["P_true"] == ""


class TestImprove:
    def test_swap(self, tmp_path):
        out = tmp_path / "imp.json"
        assert run("improve", SCENARIOS / "two_cell_light_target.json", "--out", out) == 0
        rep = json.loads(out.read_text())
        assert rep["construction"] == "mass-swap" and rep["verdict"] == "strictly-dominates"
        assert rep["delta_mu"] < 0

    def test_below_threshold(self, capsys):
        assert run("improve", SCENARIOS / "two_cell_constant_low.json") == 5
        out = capsys.readouterr().out
        assert "1.38629436" in out

    def test_misspecified(self):
        assert run("improve", SCENARIOS / "misspecified.json") == 0

    def test_missing_x0(self):
        assert run("improve", SCENARIOS / "no_true_location.json") == 4


class TestVerify:
    def test_two_cell(self, tmp_path):
        out = tmp_path / "v.csv"
        assert run("verify", SCENARIOS / "two_cell.json", "--budget", 2, "--out", out) == 0
        rows = read_csv(out)
        bf = next(r for r in rows if r["method"] == "brute_force")
        assert float(bf["slack"]) <= 1e-3

    def test_size_limit(self, tmp_path):
        doc = json.loads((SCENARIOS / "two_cell.json").read_text())
        doc["distribution"]["params"]["masses"] = {str(i): 0.125 for i in range(1, 9)}
        p = tmp_path / "s.json"
        p.write_text(json.dumps(doc))
        assert run("verify", p, "--budget", 1, "--step", 0.001) == 6

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert run("verify", SCENARIOS / "two_cell.json", "--budget", 2, "--mc", "--seed", 5, "--out", out) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_ci_requires_seed(self, monkeypatch):
        monkeypatch.setenv("CI", "1")
        assert run("verify", SCENARIOS / "two_cell.json", "--budget", 2, "--mc") == 2


class TestSweep:
    def test_p_monotone(self, tmp_path):
        doc = json.loads((SCENARIOS / "two_cell.json").read_text())
        doc["effort"] = {"type": "linear", "rate": 1.0, "offset": math.log(9)}
        src = tmp_path / "s.json"
        src.write_text(json.dumps(doc))
        out = tmp_path / "sweep.csv"
        assert run("sweep", src, "--param", "p", "--values", 0.6, 0.7, 0.8, 0.9,
                   "--times", 0.1, 1, 5, "--out", out) == 0
        rows = read_csv(out)
        for t in ("0.1", "1", "5"):
            col = [float(r["P_true"]) for r in rows if r["t"] == t]
            assert all(b > a for a, b in zip(col, col[1:]))

    def test_single_value_matches_eval(self, tmp_path):
        s, e = tmp_path / "s.csv", tmp_path / "e.csv"
        run("sweep", SCENARIOS / "two_cell.json", "--param", "p", "--values", 0.8, "--times", 1, 2, "--out", s)
        run("eval", SCENARIOS / "two_cell.json", "--times", 1, 2, "--out", e)
        assert [r["P_true"] for r in read_csv(s)] == [r["P_true"] for r in read_csv(e)[:-1]]

    def test_inapplicable(self):
        assert run("sweep", SCENARIOS / "two_cell.json", "--param", "sigma", "--values", 1) == 7


class TestConfig:
    def test_config_times(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"times": [2.0]}))
        monkeypatch.setenv("SEARCHPLAN_CONFIG", str(cfg))
        out = tmp_path / "plan.csv"
        assert run("plan", SCENARIOS / "two_cell.json", "--out", out) == 0
        assert {r["t"] for r in read_csv(out)} == {"2"}
        # flags override the file
        assert run("plan", SCENARIOS / "two_cell.json", "--times", 3, "--out", out) == 0
        assert {r["t"] for r in read_csv(out)} == {"3"}

    def test_bad_config(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        monkeypatch.setenv("SEARCHPLAN_CONFIG", str(cfg))
        assert run("validate", SCENARIOS / "two_cell.json") == 2
