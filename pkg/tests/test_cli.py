import csv
import io
import json
import subprocess
import sys

import pytest

from nestedrank.choice_model import load_model
from nestedrank.cli import dispatch


def run(capsys, *argv):
    code = dispatch(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_hardness_example(capsys):
    code, out, err = run(capsys, "hardness", "--oa", "--k", "5", "--p", "0.9")
    assert code == 0 and err == ""
    d = json.loads(out)
    assert round(d["closed_forms"]["j_star"], 7) == 0.0021502
    assert abs(d["j_n"] - d["closed_forms"]["j_star"]) <= 1e-12
    assert abs(d["i_n"] - d["closed_forms"]["i_star"]) <= 1e-12


def test_hardness_bounds_and_dot(capsys):
    code, out, _ = run(capsys, "hardness", "--oa", "--k", "3", "--p", "0.6", "--delta", "0.01",
                       "--m", "6")
    b = json.loads(out)["bounds"]
    assert b["error_select"] == pytest.approx(3 * 0.6**6)
    assert b["M_select"] >= 1 and b["lower_bound_rank"] > 0
    code, out, _ = run(capsys, "hardness", "--mnl", "3,2,1", "--format", "dot")
    assert code == 0 and out.startswith("digraph") and out.count("->") == 4


def test_emit_model_roundtrip(capsys, tmp_path):
    path = tmp_path / "m.json"
    code, first, _ = run(capsys, "hardness", "--oa", "--sigma", "2,0,1", "--p", "0.7",
                         "--emit-model", str(path))
    assert code == 0
    m = load_model(path)
    assert m.to_dict()["kind"] == "oa"
    code, again, _ = run(capsys, "hardness", "--model", str(path), "--p", "0.7")
    assert code == 0 and json.loads(again) == json.loads(first)


def test_simulate_example(capsys):
    code, out, err = run(capsys, "simulate", "--oa", "--k", "5", "--p", "0.6", "--policy", "np",
                         "--delta", "1e-2", "--trials", "512", "--seed", "7")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 1 and float(rows[0]["error_rate"]) < 0.01
    assert int(rows[0]["trials"]) == 512
    # timing notes go to stderr, never into the data
    assert "trials" in err and "s for" not in out


def test_simulate_json_threads_and_trace(capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    code, out, _ = run(capsys, "simulate", "--mnl", "3,2,1.5,1", "--policy", "ne", "--delta",
                       "0.1,0.01", "--trials", "50", "--threads", "1", "--format", "json",
                       "--trace", str(trace))
    assert code == 0
    d = json.loads(out)
    assert len(d["rows"]) == 2
    events = [json.loads(line) for line in trace.read_text().splitlines()]
    assert events and all("t" in e for e in events)
    assert any(e.get("event") == "eliminate" for e in events)


def test_simulate_m_grid(capsys):
    code, out, _ = run(capsys, "simulate", "--oa", "--k", "3", "--p", "0.5", "--policy",
                       "ne-ranking", "--m", "2,4", "--trials", "20")
    assert code == 0
    assert [r["M"] for r in csv.DictReader(io.StringIO(out))] == ["2", "4"]


def test_oracle_example(capsys):
    code, out, _ = run(capsys, "oracle", "--oa", "--k", "2", "--p", "0.5", "--policy", "ne",
                       "--m", "5")
    assert code == 0
    d = json.loads(out)
    assert round(d["error_prob"], 7) == 0.030303
    assert d["closed_form"]["error_prob"] == pytest.approx(d["error_prob"], abs=1e-12)


def test_oracle_from_delta_and_guard(capsys):
    code, out, _ = run(capsys, "oracle", "--oa", "--k", "3", "--p", "0.6", "--policy", "np",
                       "--delta", "0.1")
    assert code == 0 and json.loads(out)["error_prob"] < 0.1
    code, out, err = run(capsys, "oracle", "--oa", "--k", "6", "--p", "0.6", "--policy", "np",
                         "--m", "3")
    assert code == 2 and out == "" and "instance too large" in err


def test_lowerbound_and_verify_lp(capsys):
    code, out, _ = run(capsys, "lowerbound", "--oa", "--k", "5", "--p", "0.9", "--delta", "0.01",
                       "--task", "rank")
    assert code == 0 and json.loads(out)["lower_bound"] == pytest.approx(1734.6, abs=0.05)
    code, out, _ = run(capsys, "lowerbound", "--delta", "0.01", "--info", "0.5")
    assert code == 0
    code, out, _ = run(capsys, "verify-lp", "--k", "6", "--p", "0.3")
    assert code == 0 and json.loads(out)["ok"] is True


def test_calibrate(capsys, tmp_path):
    f = tmp_path / "r.txt"
    f.write_text("5: 0,1,2\n3: 1,0,2\n2: 2,1,0\n")
    code, out, _ = run(capsys, "calibrate", "--rankings", str(f))
    assert code == 0
    d = json.loads(out)
    assert d["kind"] == "mnl" and d["weights"][0] > d["weights"][1] > d["weights"][2]


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"oa": True, "k": 3, "p": 0.5, "policy": "ne", "m": 5}))
    code, out, _ = run(capsys, "oracle", "--config", str(cfg))
    base = json.loads(out)
    assert code == 0 and base["M"] == 5
    code, out, _ = run(capsys, "oracle", "--config", str(cfg), "--m", "2")
    assert code == 0 and json.loads(out)["M"] == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(capsys, "oracle", "--config", str(cfg))
    assert code == 2 and "unknown config key" in err


def test_out_file(capsys, tmp_path):
    target = tmp_path / "o.json"
    code, out, _ = run(capsys, "verify-lp", "--k", "3", "--p", "0.5", "--out", str(target))
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["K"] == 3


@pytest.mark.parametrize("argv", [
    ["hardness", "--oa", "--k", "3"],
    ["hardness", "--oa", "--k", "3", "--p", "1.5"],
    ["hardness", "--bogus"],
    ["simulate", "--oa", "--k", "3", "--p", "0.5"],
    ["simulate", "--oa", "--k", "3", "--p", "0.5", "--policy", "ne", "--delta", "0.1",
     "--m", "3"],
    ["simulate", "--oa", "--k", "3", "--p", "0.5", "--policy", "ne", "--delta", "0.01,0.1"],
    ["oracle", "--oa", "--k", "3", "--p", "0.5", "--policy", "repeated-ne", "--m", "3"],
    ["oracle", "--oa", "--k", "3", "--p", "0.5", "--policy", "ne"],
    ["calibrate", "--rankings", "/nonexistent/file"],
    ["hardness", "--model", "/nonexistent/file"],
    ["hardness", "--oa", "--k", "3", "--p", "0.5", "--mnl", "1,2"],
    ["nosuchcommand"],
])
def test_config_errors_exit_2(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == "" and err


def test_help_exits_0(capsys):
    assert dispatch(["--help"]) == 0
    for cmd in ("hardness", "simulate", "oracle", "lowerbound", "verify-lp", "calibrate"):
        assert dispatch([cmd, "--help"]) == 0
    out = capsys.readouterr().out
    assert "--threads" in out and "--emit-model" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "nestedrank", "verify-lp", "--k", "4", "--p", "0.6"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["ok"]
    proc = subprocess.run([sys.executable, "-m", "nestedrank", "verify-lp"], capture_output=True,
                          text=True, check=False)
    assert proc.returncode == 2 and proc.stdout == ""
