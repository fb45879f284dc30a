import csv
import json
import subprocess
import sys

import pytest

from pwclock.cli import main

QUICK = {"n_processes": 4, "send_rate": 4000, "duration": 0.02, "u": 8}


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_sim_run_zero_skew(tmp_path):
    cfg = write_cfg(tmp_path, {"sim": {**QUICK, "epsilon": 0, "u": 3, "delta_se": 8, "delta_re": 8}})
    out = tmp_path / "r.csv"
    assert main(["sim", "run", "--config", cfg, "--seed", "1", "--out", str(out)]) == 0
    (row,) = read_rows(out)
    assert row["max_bits"] == "0" and row["seed"] == "1"
    meta = json.loads((tmp_path / "r.csv.meta.json").read_text())
    assert "seconds" in meta


def test_sim_run_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {"sim": QUICK, "output": {"event_log": True}})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sim", "run", "--config", cfg, "--seed", "3", "--out", str(a)]) == 0
    assert main(["sim", "run", "--config", cfg, "--seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.log").read_bytes() == (tmp_path / "b.csv.log").read_bytes()


def test_sim_run_corruption_without_reset_exits_1(tmp_path):
    fault = {"at": 5000, "process": 1, "kind": "pwc_corruption", "value": 10**12}
    cfg = write_cfg(tmp_path, {"sim": {**QUICK, "sanity_reset": False, "faults": [fault]}})
    assert main(["sim", "run", "--config", cfg, "--out", str(tmp_path / "r.csv")]) == 1


def test_usage_errors(tmp_path, capsys):
    bad = write_cfg(tmp_path, {"sim": {"nope": 1}})
    assert main(["sim", "run", "--config", bad, "--out", str(tmp_path / "r.csv")]) == 2
    sweep = write_cfg(tmp_path, {"sweep": {"u": [3, 4]}}, "s.json")
    assert main(["sim", "run", "--config", sweep, "--out", str(tmp_path / "r.csv")]) == 2
    assert main(["sim", "run", "--config", str(tmp_path / "missing.json"), "--out", "x"]) == 2
    assert main(["frobnicate"]) == 2
    assert "error" in capsys.readouterr().err


def test_sweep_2x2(tmp_path):
    cfg = write_cfg(tmp_path, {"sim": QUICK, "sweep": {"epsilon": [6250, 25000], "send_rate": [1000, 4000]}})
    d1, d2 = tmp_path / "one", tmp_path / "two"
    assert main(["sim", "sweep", "--config", cfg, "--out-dir", str(d1)]) == 0
    assert main(["sim", "sweep", "--config", cfg, "--out-dir", str(d2), "--jobs", "2"]) == 0
    rows = read_rows(d1 / "summary.csv")
    assert len(rows) == 4
    assert [(r["epsilon"], r["send_rate"]) for r in rows] == [
        ("6250", "1000"), ("6250", "4000"), ("25000", "1000"), ("25000", "4000")]
    for r in rows:
        assert r["search_u"] == r["u"]
        assert int(r["waitfree_u"]) <= int(r["search_u"])
        assert {"worst_case_u", "average_case_u", "empirical_u", "worst_case_u_delta"} <= set(r)
    assert (d1 / "summary.csv").read_bytes() == (d2 / "summary.csv").read_bytes()
    assert (d1 / "runs.csv").read_bytes() == (d2 / "runs.csv").read_bytes()
    assert read_rows(d1 / "bits_long.csv")[0].keys() == {"config", "bits", "count"}


def test_analyze(tmp_path):
    cfg = write_cfg(tmp_path, {"sim": {**QUICK, "u": 2}})
    runs = tmp_path / "r.csv"
    assert main(["sim", "run", "--config", cfg, "--out", str(runs)]) == 0
    out = tmp_path / "summary.csv"
    assert main(["analyze", "--in", str(runs), "--out", str(out), "--resimulate"]) == 0
    (row,) = read_rows(out)
    assert float(row["delayed_fraction_est"]) >= 0
    assert int(row["delayed_exact"]) > 0
    assert (tmp_path / "summary_long.csv").exists()


def test_analyze_empty_csv_exits_2(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["analyze", "--in", str(empty), "--out", str(tmp_path / "o.csv")]) == 2
    other = tmp_path / "other.csv"
    other.write_text("a,b\n1,2\n")
    assert main(["analyze", "--in", str(other), "--out", str(tmp_path / "o.csv")]) == 2


def test_hlc_demo(capsys):
    assert main(["hlc-demo"]) == 0
    out = capsys.readouterr().out
    assert "HLC order: e < f; integer order: e > f; PWC: consistent" in out
    assert "983040" in out and "917584" in out


def test_net_measure_self_test(capsys):
    assert main(["net", "measure", "--role", "send", "--seconds", "0.02", "--self-test"]) == 0
    fit = json.loads(capsys.readouterr().out)
    assert fit["const1_ns"] == pytest.approx(1000, rel=0.2)
    assert main(["net", "measure", "--role", "send", "--sizes", "5,5", "--self-test"]) == 2


def test_net_agent_command(tmp_path, capsys):
    import socket
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    peer = s.getsockname()
    cfg = write_cfg(tmp_path, {"agent": {"agent_id": 1, "listen": ["127.0.0.1", 0], "duration": 0.3,
                                         "rate_limit": 200, "peers": [[2, list(peer)]], "drain": 0.1}})
    assert main(["net", "agent", "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["sent"] > 0
    s.close()


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "pwclock.cli", "hlc-demo"], capture_output=True, text=True)
    assert r.returncode == 0 and "PWC: consistent" in r.stdout
