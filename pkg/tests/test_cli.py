import csv
import json
import math

import pytest

from aovcache.cli import config_digest, main


UNIT_DOC = {
    "system": {"N": 1, "beta": 1.0, "M": 0, "zipf_alpha": 0.0, "lambda": 1.0},
    "costs": {"c_a": 1.0, "c_f": 1.0, "c_w": 0.5},
    "policy": "infinite-capacity",
    "sim": {"horizon_events": 60000, "seed": 7, "warmup": 0.1},
}

DESK_DOC = {
    "system": {"N": 20, "beta": 4.0, "M": 5, "zipf_alpha": 1.0, "lambda": 0.01},
    "costs": {"c_a": 0.1, "c_f": 1.0, "c_w": 0.01},
    "policy": "whittle",
    "sim": {"horizon_events": 60000, "seed": 3, "warmup": 0.1},
    "sweep": {"axis": "M", "values": [4, 5], "reps": 2},
}


@pytest.fixture
def unit_cfg(tmp_path):
    p = tmp_path / "unit.json"
    p.write_text(json.dumps(UNIT_DOC))
    return str(p)


@pytest.fixture
def desk_cfg(tmp_path):
    p = tmp_path / "desk.json"
    p.write_text(json.dumps(DESK_DOC))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestSolve:
    def test_unit_thresholds(self, unit_cfg, tmp_path):
        out = tmp_path / "o"
        assert main(["solve", "--config", unit_cfg, "--out", str(out),
                     "--ch-points", "3"]) == 0
        rows = read_csv(out / "thresholds.csv")
        assert list(rows[0].keys()) == ["content_id", "C_h", "tau_bar", "tau_tilde",
                                        "Q_bar", "Q_hat", "tau0", "I", "theta"]
        first = rows[0]
        assert float(first["C_h"]) == 0.0
        assert float(first["tau_bar"]) == pytest.approx(-2 + math.sqrt(7), abs=1e-9)
        assert float(first["tau_bar"]) == float(first["tau_tilde"])  # C_h=0 collapse
        assert first["Q_bar"] == "1"
        assert float(first["I"]) == pytest.approx(0.2224, abs=5e-5)
        last = rows[-1]
        assert float(last["tau_bar"]) == pytest.approx(0.0, abs=1e-9)
        assert float(last["theta"]) == pytest.approx(0.75, abs=1e-9)

    def test_paper_content_qhat(self, tmp_path):
        doc = dict(DESK_DOC, system={"N": 1000, "beta": 40.0, "M": 200,
                                     "zipf_alpha": 1.0, "lambda": 0.01})
        p = tmp_path / "paper.json"
        p.write_text(json.dumps(doc))
        out = tmp_path / "o2"
        assert main(["solve", "--config", str(p), "--out", str(out),
                     "--ch-points", "2"]) == 0
        rows = [r for r in read_csv(out / "thresholds.csv") if r["content_id"] == "0"]
        assert rows[0]["Q_hat"] == "32"

    def test_malformed_config_exits_2(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["solve", "--config", str(p)]) == 2
        p2 = tmp_path / "bad2.json"
        p2.write_text(json.dumps({"system": {"N": 3}}))
        assert main(["solve", "--config", str(p2)]) == 2

    def test_invalid_params_exit_2(self, tmp_path, capsys):
        doc = json.loads(json.dumps(UNIT_DOC))
        doc["system"]["lambda"] = -0.01  # flipped sign
        p = tmp_path / "flip.json"
        p.write_text(json.dumps(doc))
        assert main(["solve", "--config", str(p)]) == 2
        assert "lambda" in capsys.readouterr().err


class TestWhittleCmd:
    def test_index_table(self, unit_cfg, tmp_path):
        out = tmp_path / "w"
        assert main(["whittle", "--config", unit_cfg, "--out", str(out),
                     "--tau-points", "3"]) == 0
        rows = read_csv(out / "whittle.csv")
        assert list(rows[0].keys()) == ["content_id", "family", "Q", "tau", "W"]
        cached = [r for r in rows if r["family"] == "cached"]
        assert float(cached[0]["W"]) == pytest.approx(0.2224, abs=5e-5)  # tau=0 -> I
        assert float(cached[-1]["W"]) == pytest.approx(0.0, abs=1e-8)    # tau=tau*
        unc = {int(r["Q"]): float(r["W"]) for r in rows if r["family"] == "uncached"}
        assert unc[0] == 0.0
        assert unc[1] == pytest.approx(0.2224, abs=5e-5)

    def test_unknown_family_exits_2(self, unit_cfg):
        assert main(["whittle", "--config", unit_cfg, "--family", "bogus"]) == 2


class TestSimulateAndSweep:
    def test_simulate_columns_and_determinism(self, desk_cfg, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(["simulate", "--config", desk_cfg, "--out", str(out1)]) == 0
        assert main(["simulate", "--config", desk_cfg, "--out", str(out2)]) == 0
        b1 = (out1 / "metrics.csv").read_bytes()
        assert b1 == (out2 / "metrics.csv").read_bytes()
        rows = read_csv(out1 / "metrics.csv")
        assert [r["replication"] for r in rows] == ["0", "mean"]
        assert rows[0]["policy"] == "whittle"
        total = sum(float(rows[0][k]) for k in ("fetch_cost", "ageing_cost",
                                                "waiting_cost"))
        assert float(rows[0]["avg_cost"]) == pytest.approx(total, rel=1e-6)

    def test_sweep_from_config_section(self, desk_cfg, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--config", desk_cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "metrics.csv")
        reps = [r for r in rows if r["replication"] != "mean"]
        means = [r for r in rows if r["replication"] == "mean"]
        assert len(reps) == 4 and len(means) == 2
        assert all(r["avg_cost_se"] != "" for r in means)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_digest"] == config_digest(DESK_DOC)
        assert str(out / "metrics.csv") in manifest["outputs"]

    def test_policy_axis(self, desk_cfg, tmp_path):
        out = tmp_path / "pol"
        assert main(["sweep", "--config", desk_cfg, "--out", str(out),
                     "--axis", "policy", "--values", "whittle,static-top-m",
                     "--reps", "1"]) == 0
        rows = read_csv(out / "metrics.csv")
        assert {r["policy"] for r in rows} == {"whittle", "static-top-m"}

    def test_missing_axis_exits_2(self, unit_cfg):
        assert main(["sweep", "--config", unit_cfg]) == 2


class TestLowerBoundAndCompare:
    def test_bound_csv_and_gap(self, desk_cfg, tmp_path):
        out = tmp_path / "lb"
        assert main(["lower-bound", "--config", desk_cfg, "--out", str(out),
                     "--m-values", "4,5"]) == 0
        rows = read_csv(out / "lower_bound.csv")
        assert [r["M"] for r in rows] == ["4", "5"]
        assert float(rows[0]["bound"]) > float(rows[1]["bound"])  # more capacity helps
        sw = tmp_path / "sw2"
        assert main(["sweep", "--config", desk_cfg, "--out", str(sw)]) == 0
        cmp_out = tmp_path / "cmp"
        assert main(["compare", "--config", desk_cfg, "--out", str(cmp_out),
                     "--metrics", str(sw / "metrics.csv")]) == 0
        gaps = read_csv(cmp_out / "compare.csv")
        assert len(gaps) == 2
        for g in gaps:
            assert float(g["relative_gap"]) > -0.05  # cost >= bound - noise


class TestDigest:
    def test_stable_under_key_order(self):
        a = {"x": 1, "y": {"b": 2, "a": 3}}
        b = {"y": {"a": 3, "b": 2}, "x": 1}
        assert config_digest(a) == config_digest(b)
        assert config_digest(a) != config_digest({"x": 2, "y": {"b": 2, "a": 3}})


class TestVerifyCmd:
    def test_quick_battery_passes(self, unit_cfg, capsys):
        assert main(["verify", "--config", unit_cfg, "--quick"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_oracle_agreement_is_not_exact(self, unit_cfg):
        # demonstrates the battery tolerance is load-bearing: a 1e-15
        # demand on closed-form vs grid agreement necessarily fails
        from aovcache.oracle import value_iterate_infinite
        from aovcache.thresholds import solve_infinite_capacity
        theta = solve_infinite_capacity(1, 1, 1, 1, 0.5)[2]
        vt = value_iterate_infinite(1, 1, 1, 1, 0.5)
        assert abs(vt.theta - theta) > 1e-15
