import json
import subprocess
import sys

import pytest

from codedkf.cli import main
from codedkf.scenario_io import ScenarioFileError, parse_scenario


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


TWO_MODE = {"source": {"A": {"diag": [2, 3]}}, "channel": {"gains": [1, 1]}, "p": 12}
SCALAR = {"source": {"A": [[2]], "Q": [[1]]}, "channel": {"H": [[1]]}, "p": 5,
          "simulation": {"T": 20000, "burn_in": 1000, "trials": 1, "seed": 3}}


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_feasible_and_infeasible(tmp_path, capsys):
    code, out, _ = run(["check", "--scenario", write(tmp_path, "a.json", TWO_MODE)], capsys)
    env = json.loads(out)
    assert code == 0 and env["command"] == "check"
    assert env["payload"]["min_power"] == pytest.approx(11.0) and env["payload"]["feasible"]
    assert env["input_digest"].startswith("sha256:")
    code, out, _ = run(["check", "--scenario", write(tmp_path, "b.json", {**TWO_MODE, "p": 10})], capsys)
    assert code == 2 and not json.loads(out)["payload"]["feasible"]


def test_malformed_and_unknown_keys(tmp_path, capsys):
    code, _, err = run(["check", "--scenario", write(tmp_path, "bad.json", '{"source": {')], capsys)
    assert code == 1 and "line 1" in err
    code, _, err = run(["check", "--scenario", write(tmp_path, "u.json", {**TWO_MODE, "extra": 1})], capsys)
    assert code == 1 and "unknown key" in err
    code, _, err = run(["check", "--scenario", str(tmp_path / "missing.json")], capsys)
    assert code == 1 and err.startswith("error:")


def test_digest_stable(tmp_path, capsys):
    path = write(tmp_path, "a.json", TWO_MODE)
    d1 = json.loads(run(["check", "--scenario", path], capsys)[1])["input_digest"]
    d2 = json.loads(run(["check", "--scenario", path], capsys)[1])["input_digest"]
    raw = open(path, "rb").read()
    assert d1 == d2 == parse_scenario(raw).digest


def test_design_and_overwrite_protection(tmp_path, capsys):
    scen = write(tmp_path, "s.json", SCALAR)
    out = str(tmp_path / "d.json")
    code, stdout, _ = run(["design", "--scenario", scen, "--out", out], capsys)
    env = json.loads(open(out).read())
    assert code == 0 and env["payload"]["predicted_mse"] == pytest.approx(3.0, rel=1e-5)
    assert env["payload"]["predicted_power"] <= 5.0 * (1 + 1e-9)
    before = open(out).read()
    code, _, err = run(["design", "--scenario", scen, "--out", out], capsys)
    assert code == 1 and "exists" in err and open(out).read() == before
    assert run(["design", "--scenario", scen, "--out", out, "--force"], capsys)[0] == 0
    code, _, _ = run(["design", "--scenario", write(tmp_path, "i.json", {**SCALAR, "p": 2.5}),
                      "--out", str(tmp_path / "x.json")], capsys)
    assert code == 2 and not (tmp_path / "x.json").exists()


def test_simulate_deterministic_with_trace(tmp_path, capsys):
    scen = write(tmp_path, "s.json", SCALAR)
    des = str(tmp_path / "d.json")
    run(["design", "--scenario", scen, "--out", des], capsys)
    tr = str(tmp_path / "t.csv")
    code, o1, _ = run(["simulate", "--scenario", scen, "--design", des, "--trace", tr], capsys)
    assert code == 0
    p1 = json.loads(o1)["payload"]
    assert p1["mse_rel_dev"] < 0.1 and p1["power_rel_dev"] < 0.1
    header = open(tr).readline().strip()
    assert header == "t,trial,s_0,s_hat_0,sq_error,power"
    csv1 = open(tr).read()
    code, o2, _ = run(["simulate", "--scenario", scen, "--design", des, "--trace", tr, "--force"], capsys)
    assert json.loads(o2)["payload"] == p1 and open(tr).read() == csv1
    code, _, _ = run(["simulate", "--scenario", scen, "--design", str(tmp_path / "nope.json")], capsys)
    assert code == 1
    two = write(tmp_path, "two.json", TWO_MODE)
    code, _, err = run(["simulate", "--scenario", two, "--design", des], capsys)
    assert code == 1 and "design is" in err


def test_control_paths(tmp_path, capsys):
    ctl = {**SCALAR, "control": {"B": [[1]], "C_cost": [[1]], "E_cost": [[0]], "allow_singular_E": True},
           "simulation": {"T": 50000, "burn_in": 2000, "trials": 1, "seed": 1}}
    code, out, _ = run(["control", "--scenario", write(tmp_path, "c.json", ctl)], capsys)
    pay = json.loads(out)["payload"]
    assert code == 0 and pay["trace_QF"] == pytest.approx(1.0)
    assert pay["predicted_lqr_gain_weighted"] == pytest.approx(13.0, rel=1e-5)
    assert pay["rel_dev_gain_weighted"] < 0.1
    code, _, _ = run(["control", "--scenario", write(tmp_path, "n.json", SCALAR)], capsys)
    assert code == 1
    bad = {**ctl, "control": {**ctl["control"], "B": [[0]]}}
    code, _, _ = run(["control", "--scenario", write(tmp_path, "u.json", bad)], capsys)
    assert code == 2


def test_capacity(tmp_path, capsys):
    doc = {"source": {"A": [[2]]}, "channel": {"gains": [1, 1]}, "p": 1e6}
    pay = json.loads(run(["capacity", "--scenario", write(tmp_path, "c.json", doc)], capsys)[1])["payload"]
    assert pay["suboptimality_ratio"] == pytest.approx(0.5264, abs=1e-4)
    doc = {"source": {"A": [[2]]}, "channel": {"gains": [1.5]}, "p": 10}
    pay = json.loads(run(["capacity", "--scenario", write(tmp_path, "d.json", doc)], capsys)[1])["payload"]
    assert pay["suboptimality_ratio"] == 1.0
    doc = {"source": {"A": [[2]]}, "channel": {"gains": [1, 1]}, "p": 0}
    code, out, _ = run(["capacity", "--scenario", write(tmp_path, "e.json", doc)], capsys)
    assert code == 0 and json.loads(out)["payload"]["shannon_capacity_nats"] == 0.0


def test_conjecture_command(tmp_path, capsys):
    args = ["conjecture", "--dims", "2x2", "--count", "1", "--seed", "7", "--restarts", "4"]
    p1 = json.loads(run(args, capsys)[1])
    p2 = json.loads(run(args, capsys)[1])
    for p in (p1, p2):
        p["payload"].pop("elapsed_seconds")
        p.pop("timestamp")
    assert p1 == p2
    empty = json.loads(run(["conjecture", "--dims", "2x2", "--count", "0"], capsys)[1])
    assert empty["payload"]["records"] == []
    assert run(["conjecture", "--dims", "2by2"], capsys)[0] == 1
    assert run(["conjecture", "--dims", "10x10"], capsys)[0] == 1


def test_scenario_parser_rejections():
    with pytest.raises(ScenarioFileError):
        parse_scenario(json.dumps({**TWO_MODE, "channel": {"gains": [1], "H": [[1]]}}).encode())
    with pytest.raises(ScenarioFileError):
        parse_scenario(json.dumps({**TWO_MODE, "p": -1}).encode())
    with pytest.raises(ScenarioFileError):
        parse_scenario(json.dumps({"source": {"A": [[0.5]]}, "channel": {"gains": [1]}, "p": 1}).encode())


def test_module_entry_point(tmp_path):
    path = write(tmp_path, "b.json", {**TWO_MODE, "p": 10})
    r = subprocess.run([sys.executable, "-m", "codedkf", "check", "--scenario", path],
                       capture_output=True, text=True)
    assert r.returncode == 2 and json.loads(r.stdout)["command"] == "check"
