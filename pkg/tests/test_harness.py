import csv
import io
import json

import pytest

from mpmd.adversary import AdversaryConfig
from mpmd.harness import (ExperimentError, ExperimentSpec, cell_source, expand_grid, parse_source,
                          run_experiment, sweep)
from mpmd.instance import Instance, ParameterError, gen_example1, save_instance
from mpmd.offline import CapacityError


def test_parse_source_kinds(tmp_path):
    assert len(parse_source("ex1:n=3")) == 8
    assert parse_source("ex2:n=4").meta["generator"] == "example2"
    assert len(parse_source("ex3:n=1,m=1")) == 14
    assert parse_source("random:K=3,count=6", seed=5) == parse_source("random:K=3,count=6", seed=5)
    assert parse_source("rlb:K=3,tau=0.5,sigma=2-0-1").requests[0].point == 2
    assert isinstance(parse_source("adv5:K=3,n=4,m=2,alpha=3"), AdversaryConfig)
    path = tmp_path / "x.jsonl"
    save_instance(gen_example1(2, 1.0, 0.1, 1.0), path)
    assert isinstance(parse_source(str(path)), Instance)
    with pytest.raises(ParameterError):
        parse_source("ex1:n=3,bogus=1")
    with pytest.raises(ParameterError):
        parse_source("nope.jsonl")


def test_trivial_ratio_one():
    rec = run_experiment(ExperimentSpec("random:K=1,count=2", "algA", "exact"))
    assert rec.ratio == pytest.approx(1.0)


def test_example1_experiment(tmp_path):
    out = tmp_path / "rec.json"
    rec = run_experiment(ExperimentSpec("ex1:n=10,eps=0.01", "s1", "exact", out=str(out)))
    assert rec.exact and rec.ratio >= 100
    assert json.loads(out.read_text())["ratio"] == rec.ratio
    algo = run_experiment(ExperimentSpec("ex1:n=10,eps=0.01", "algA", "exact"))
    assert algo.ratio <= 50 * 2 and algo.violations == []


def test_offline_modes():
    rec = run_experiment(ExperimentSpec("adv5:K=4,n=8,m=1", "s3:1", "both"))
    assert not rec.exact and rec.offline_method == "structured"
    assert rec.round_costs and rec.round_bounds
    with pytest.raises(CapacityError):
        run_experiment(ExperimentSpec("adv5:K=4,n=8,m=1", "s3:1", "exact"))
    ex3 = run_experiment(ExperimentSpec("ex3:n=3,m=2", "s3:1", "structured"))
    assert ex3.offline_method == "internal_only"
    with pytest.raises(ParameterError):
        ExperimentSpec("ex1:n=2", offline="fuzzy")


def test_engine_errors_are_annotated():
    with pytest.raises(ExperimentError) as err:
        run_experiment(ExperimentSpec("ex1:n=2", "s1:1e400", "exact"))
    assert "ex1:n=2" in str(err.value)


def test_cell_source():
    assert cell_source({"source": "adv5", "K": 3, "n": 4, "m": 2, "theta": 1}) == "adv5:K=3,n=4,m=2"
    assert cell_source({"source": "ex1:eps=0.1", "n": 4}) == "ex1:eps=0.1,n=4"
    assert cell_source({"source": "random", "K": 3, "n": 8}) == "random:K=3,count=8"
    with pytest.raises(ParameterError):
        expand_grid({"colour": [1]})


def test_single_cell_equals_run_experiment():
    table = sweep({"source": ["ex1"], "n": [3], "matcher": ["s2:1"]}, offline="exact")
    direct = run_experiment(ExperimentSpec("ex1:n=3", "s2:1", "exact", seed=table.records[0].seed))
    assert table.records[0].to_json() == direct.to_json()


def test_sweep_outputs(tmp_path):
    grid = {"source": ["adv5"], "K": [3, 4], "n": [4], "m": [1], "matcher": ["greedy", "s3:1"]}
    out = tmp_path / "s.csv"
    table = sweep(grid, out, seed=3)
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    cells = [r for r in rows if r["row"] == "cell"]
    summary = [r for r in rows if r["row"] == "summary_max"]
    assert len(cells) == 4 and len(summary) == 4
    assert list(rows[0])[:5] == ["source", "K", "n", "m", "matcher"]
    for r in cells:
        assert float(r["min_round_cost"]) >= (int(r["K"]) - 1) - 1e-6
    assert len(out.with_suffix(".jsonl").read_text().splitlines()) == 4
    assert "created" in json.loads(out.with_suffix(".meta.json").read_text())
    again = tmp_path / "t.csv"
    sweep(grid, again, seed=3, workers=2)
    assert again.read_bytes() == out.read_bytes()
    assert table.summary()[0]["matcher"] == "greedy"


def test_sweep_records_errors():
    table = sweep({"source": ["ex1"], "n": [2], "matcher": ["algA", "nonsense"]}, offline="exact")
    assert table.records[0].error == ""
    assert "unknown matcher" in table.records[1].error
    assert "nonsense" not in {s["matcher"] for s in table.summary()}
