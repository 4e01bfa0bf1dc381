import json

import pytest

from mpmd import cli
from mpmd.engine import AuditError
from mpmd.instance import load_instance


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_roundtrip(tmp_path, capsys):
    path = tmp_path / "ex1.jsonl"
    code, _, _ = run(capsys, "generate", "--instance", "ex1:n=4", "--out", str(path))
    assert code == 0
    assert len(load_instance(path)) == 10
    code, out, _ = run(capsys, "simulate", "--instance", str(path), "--matcher", "s1:1")
    assert code == 0 and json.loads(out)["matches"]


def test_generate_adversary_trace(capsys):
    code, out, _ = run(capsys, "generate", "--instance", "adv5:K=3,n=4,m=1", "--matcher", "greedy")
    assert code == 0 and "adversary_round" in out


def test_simulate_ratio(capsys):
    code, out, _ = run(capsys, "simulate", "--instance", "ex1:n=10,eps=0.01", "--matcher", "s1",
                       "--offline", "exact")
    body = json.loads(out)
    assert code == 0 and body["ratio"] >= 100


def test_offline(capsys):
    code, out, _ = run(capsys, "offline", "--instance", "ex2:n=4")
    body = json.loads(out)
    assert code == 0 and body["exact"] and body["method"] == "dp"


def test_adversary(tmp_path, capsys):
    out = tmp_path / "adv.json"
    code, _, _ = run(capsys, "adversary", "--spec", "adv5:K=3,n=4,m=2", "--matcher", "algA", "--out", str(out))
    body = json.loads(out.read_text())
    assert code == 0 and len(body["rounds"]) == 2
    assert all(r["matcher_cost"] >= body["lower_floor"] - 1e-6 for r in body["rounds"])


def test_sweep(tmp_path, capsys):
    grid = tmp_path / "g.json"
    grid.write_text(json.dumps({"source": ["ex1"], "n": [2, 3], "matcher": ["algA"]}))
    code, out, _ = run(capsys, "sweep", "--grid", str(grid))
    assert code == 0 and out.count("\n") == 4


def test_verify(capsys):
    code, out, _ = run(capsys, "verify", "--instance", "ex3:n=1,m=1", "--matcher", "algA", "--matcher", "s3")
    assert code == 0 and out.strip().endswith("ok")


@pytest.mark.parametrize("argv", [
    ["simulate", "--instance", "ex2:n=3"],
    ["simulate", "--instance", "missing.jsonl"],
    ["simulate", "--instance", "ex1:n=2", "--matcher", "s9:1"],
    ["adversary", "--spec", "adv5:K=1,n=2"],
    ["sweep", "--grid", "{not json"],
])
def test_input_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_violation_exit(monkeypatch, capsys):
    def broken(*a, **kw):
        raise AuditError("match list is not perfect")

    monkeypatch.setattr(cli, "simulate", broken)
    code, _, err = run(capsys, "simulate", "--instance", "ex1:n=2")
    assert code == 1 and "not perfect" in err
    code, out, _ = run(capsys, "verify", "--instance", "ex1:n=2")
    assert code == 1 and "VIOLATION" in out
