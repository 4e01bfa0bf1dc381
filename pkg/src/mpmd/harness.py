"""Experiment orchestration: run a matcher on a source, compare with an offline
baseline and collect ratios, singly or over a parameter grid."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from ._validation import check_instance
from .adversary import AdversaryConfig, per_round_costs, run_adversary, verify_round_facts
from .costfn import TimeCostFunction
from .engine import simulate
from .instance import (Instance, ParameterError, example2_tau, gen_example1, gen_example2,
                       gen_example3, gen_random, gen_randomized_lb, load_instance)
from .matchers import parse_matcher
from .metric import MetricSpace, build_uniform
from .offline import (DP_CAP, CapacityError, NotApplicableError, internal_only_pairing,
                      optimal_dp, structured_round_bound)

OFFLINE_MODES = ("exact", "structured", "both")
SOURCE_KINDS = ("ex1", "ex2", "ex3", "random", "rlb", "adv5")
RATIO_FLOOR = 1 - 1e-9


class ExperimentError(RuntimeError):
    """An engine or offline failure, tagged with the experiment that caused it."""

    def __init__(self, spec, cause: BaseException):
        self.spec = spec
        self.cause = cause
        super().__init__(f"{type(cause).__name__}: {cause} [source={spec.source!r}, matcher={spec.matcher!r}]")


# -- source specs -----------------------------------------------------------

def _kv(text: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, val = part.partition("=")
        if not sep:
            raise ParameterError(f"expected key=value, got {part!r}")
        out[key.strip()] = val.strip()
    return out


def _cost_fn(kw: dict) -> TimeCostFunction:
    if "f" in kw:
        return TimeCostFunction.parse(kw.pop("f"))
    return TimeCostFunction.monomial(float(kw.pop("alpha", 2.0)))


def _take(kw: dict, key: str, cast, default=None):
    if key not in kw:
        if default is None:
            raise ParameterError(f"missing parameter {key!r}")
        return default
    try:
        return cast(kw.pop(key))
    except ValueError:
        raise ParameterError(f"bad value for {key!r}") from None


def parse_source(text: str, seed: int = 0) -> Union[Instance, AdversaryConfig]:
    """Turn a source spec into an instance (or an adversary config).

    ``text`` is either a path to an instance file or ``<kind>:<key>=<value>,...``
    with kind one of ``ex1 ex2 ex3 random rlb adv5``; ``alpha=`` or ``f=`` sets the
    delay cost (default ``monomial:2``).
    """
    kind, sep, rest = text.partition(":")
    kind = kind.strip().lower()
    if not sep or kind not in SOURCE_KINDS:
        path = Path(text)
        if not path.exists():
            raise ParameterError(f"{text!r} is neither an instance file nor a known source spec")
        return load_instance(path)
    kw = _kv(rest)
    if kind == "adv5":
        if "alpha" in kw:
            kw["f"] = TimeCostFunction.monomial(float(kw.pop("alpha"))).to_spec()
        body = ",".join(f"{k}={v}" for k, v in kw.items())
        return AdversaryConfig.parse(f"adv5:{body}")
    f = _cost_fn(kw)
    if kind == "ex1":
        inst = gen_example1(_take(kw, "n", int, 10), _take(kw, "theta", float, 1.0),
                            _take(kw, "eps", float, 0.01), _take(kw, "delta", float, 1.0), f)
    elif kind == "ex2":
        n, theta, eps = _take(kw, "n", int, 4), _take(kw, "theta", float, 1.0), _take(kw, "eps", float, 0.1)
        tau = _take(kw, "tau", float, example2_tau(n, theta, eps, f))
        inst = gen_example2(n, tau, _take(kw, "delta", float, 1.0), theta, eps, f)
    elif kind == "ex3":
        inst = gen_example3(_take(kw, "n", int, 1), _take(kw, "T0", float, 2.0), _take(kw, "m", int, 2),
                            _take(kw, "delta", float, 1.0), _take(kw, "theta", float, 1.0),
                            perturbation_budget=_take(kw, "budget", float, 0.0), f=f,
                            calibrate=bool(_take(kw, "calibrate", int, 0)))
    elif kind == "random":
        if "metric" in kw:
            space = MetricSpace.from_json(json.loads(Path(kw.pop("metric")).read_text()))
        else:
            space = build_uniform(_take(kw, "K", int, 3), _take(kw, "delta", float, 1.0))
        inst = gen_random(space, _take(kw, "count", int, 10), _take(kw, "horizon", float, 5.0),
                          _take(kw, "seed", int, int(seed)), f)
    else:  # rlb
        K = _take(kw, "K", int, 4)
        sigma = kw.pop("sigma", None)
        sigma = tuple(int(x) for x in sigma.split("-")) if sigma else None
        inst = gen_randomized_lb(K, _take(kw, "tau", float, 1.0), _take(kw, "delta", float, 1.0),
                                 sigma=sigma, rounds=_take(kw, "m", int, 1),
                                 gap_policy=_take(kw, "gap", float, 0.0), f=f)
    if kw:
        raise ParameterError(f"unused parameters for {kind}: {sorted(kw)}")
    return inst


def resolve_matcher(spec: str, theta: Optional[float] = None):
    """Like :func:`parse_matcher`, but a bare ``s1``/``s2``/``s3`` takes ``theta``."""
    s = spec.strip()
    if s.lower() in ("s1", "s2", "s3"):
        s = f"{s}:{theta if theta is not None else 1.0!r}"
    return parse_matcher(s)


# -- single experiment -------------------------------------------------------

@dataclass
class ExperimentSpec:
    source: str
    matcher: str = "algA"
    offline: str = "both"
    seed: int = 0
    out: Optional[str] = None
    trace: bool = False

    def __post_init__(self):
        if self.offline not in OFFLINE_MODES:
            raise ParameterError(f"offline mode must be one of {OFFLINE_MODES}, got {self.offline!r}")


@dataclass
class RatioRecord:
    source: str
    matcher: str
    seed: int
    n_requests: int = 0
    K: int = 0
    space_cost: float = math.nan
    time_cost: float = math.nan
    total_cost: float = math.nan
    offline_cost: float = math.nan
    offline_method: str = ""
    exact: bool = False
    ratio: float = math.nan
    round_costs: list = field(default_factory=list)
    round_bounds: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    error: str = ""

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def min_round_cost(self) -> float:
        return min(self.round_costs) if self.round_costs else math.nan


def offline_baseline(instance: Instance, mode: str) -> tuple:
    """Return ``(cost, method, exact)`` for the requested offline mode."""
    exact = None
    if mode in ("exact", "both"):
        if len(instance) <= DP_CAP:
            exact = optimal_dp(instance).cost
        elif mode == "exact":
            raise CapacityError(f"exact offline needs <= {DP_CAP} requests, instance has {len(instance)}")
    if exact is not None:
        return exact, "dp", True
    construction = instance.meta.get("construction")
    if construction in ("adversary_round", "randomized_round"):
        return structured_round_bound(instance, construction).cost, "structured", False
    if instance.meta.get("generator") == "example3":
        return internal_only_pairing(instance).cost, "internal_only", False
    raise NotApplicableError("no structured pairing is known for this instance")


def _theta_of(obj) -> Optional[float]:
    if isinstance(obj, Instance):
        return obj.meta.get("params", {}).get("theta")
    return None


def run_experiment(spec: ExperimentSpec) -> RatioRecord:
    """Simulate, compute the offline baseline per ``spec.offline`` and build a record.

    Deterministic given ``spec``. Writes the record as JSON when ``spec.out`` is set.
    """
    src = parse_source(spec.source, spec.seed)
    matcher = resolve_matcher(spec.matcher, _theta_of(src))
    rec = RatioRecord(spec.source, matcher.spec_string(), spec.seed)
    try:
        if isinstance(src, AdversaryConfig):
            inst, res = run_adversary(matcher, src, trace=spec.trace)
            rec.round_costs = per_round_costs(inst, res)
            facts = verify_round_facts(inst, res.matches, src)
            rec.violations += [f"{k}: {v['witnesses'][:3]}" for k, v in facts.facts.items() if not v["passed"]]
        else:
            inst = check_instance(src)
            res = simulate(matcher, inst, trace=spec.trace)
        if inst.meta.get("construction") in ("adversary_round", "randomized_round"):
            sb = structured_round_bound(inst, inst.meta["construction"])
            rec.round_bounds = list(sb.detail["per_round"])
        rec.n_requests, rec.K = len(inst), inst.space.k
        rec.space_cost, rec.time_cost, rec.total_cost = res.space_cost, res.time_cost, res.total_cost
        rec.offline_cost, rec.offline_method, rec.exact = offline_baseline(inst, spec.offline)
    except (ParameterError, CapacityError, NotApplicableError):
        raise
    except Exception as exc:
        raise ExperimentError(spec, exc) from exc
    rec.ratio = rec.total_cost / rec.offline_cost if rec.offline_cost > 0 else math.inf
    if hasattr(matcher, "invariant_violations"):
        rec.violations += [str(v) for v in matcher.invariant_violations()]
    if rec.exact and rec.ratio < RATIO_FLOOR:
        rec.violations.append(f"ratio {rec.ratio!r} below 1 against an exact optimum")
    if spec.out:
        Path(spec.out).write_text(json.dumps(rec.to_json(), indent=2, sort_keys=True) + "\n")
    return rec


# -- sweeps ------------------------------------------------------------------

GRID_KEYS = ("source", "K", "alpha", "theta", "tau", "n", "m", "matcher")
RESULT_COLUMNS = ("row", "n_requests", "total_cost", "space_cost", "time_cost", "offline_cost",
                  "offline_method", "exact", "ratio", "rounds", "min_round_cost", "violations", "error")

# which grid keys each source kind understands, and under what name
_KIND_PARAMS = {
    "ex1": {"n": "n", "theta": "theta", "alpha": "alpha"},
    "ex2": {"n": "n", "theta": "theta", "alpha": "alpha", "tau": "tau"},
    "ex3": {"n": "n", "theta": "theta", "alpha": "alpha", "m": "m"},
    "random": {"K": "K", "alpha": "alpha", "n": "count"},
    "rlb": {"K": "K", "alpha": "alpha", "tau": "tau", "m": "m"},
    "adv5": {"K": "K", "alpha": "alpha", "n": "n", "m": "m", "tau": "tau"},
}


def cell_source(cell: dict) -> str:
    """Build a source spec from a grid cell; keys a kind does not use are ignored."""
    src = str(cell.get("source", "ex1"))
    kind, sep, extra = src.partition(":")
    if kind not in _KIND_PARAMS:
        return src
    parts = [extra] if extra else []
    for key, name in _KIND_PARAMS[kind].items():
        if key in cell:
            parts.append(f"{name}={cell[key]}")
    return f"{kind}:" + ",".join(parts)


def cell_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def expand_grid(grid: dict) -> list:
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ParameterError(f"unknown grid keys {sorted(unknown)}; allowed: {GRID_KEYS}")
    keys = [k for k in GRID_KEYS if k in grid]
    values = [list(grid[k]) if isinstance(grid[k], (list, tuple)) else [grid[k]] for k in keys]
    return [dict(zip(keys, combo)) for combo in product(*values)]


def _run_cell(args) -> RatioRecord:
    index, cell, seed, offline = args
    spec = ExperimentSpec(cell_source(cell), str(cell.get("matcher", "algA")), offline, cell_seed(seed, index))
    try:
        return run_experiment(spec)
    except Exception as exc:
        rec = RatioRecord(spec.source, spec.matcher, spec.seed)
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(_fmt(x) for x in v)
    return str(v)


@dataclass
class SweepTable:
    keys: list
    cells: list
    records: list

    def summary(self) -> list:
        """Max ratio per (matcher, K), over cells without errors."""
        best: dict = {}
        for cell, rec in zip(self.cells, self.records):
            if rec.error or not math.isfinite(rec.ratio):
                continue
            key = (rec.matcher, int(cell.get("K", rec.K)))
            best[key] = max(best.get(key, -math.inf), rec.ratio)
        return [{"matcher": m, "K": K, "max_ratio": r} for (m, K), r in sorted(best.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.keys) + list(RESULT_COLUMNS))
        for cell, rec in zip(self.cells, self.records):
            row = {"row": "cell", "n_requests": rec.n_requests, "total_cost": rec.total_cost,
                   "space_cost": rec.space_cost, "time_cost": rec.time_cost,
                   "offline_cost": rec.offline_cost, "offline_method": rec.offline_method,
                   "exact": rec.exact, "ratio": rec.ratio, "rounds": len(rec.round_costs),
                   "min_round_cost": rec.min_round_cost, "violations": len(rec.violations),
                   "error": rec.error}
            w.writerow([_fmt(cell.get(k, "")) for k in self.keys] + [_fmt(row[c]) for c in RESULT_COLUMNS])
        for s in self.summary():
            head = [s["matcher"] if k == "matcher" else s["K"] if k == "K" else "" for k in self.keys]
            tail = {c: "" for c in RESULT_COLUMNS}
            tail.update(row="summary_max", ratio=_fmt(s["max_ratio"]))
            if "matcher" not in self.keys:
                tail["error"] = f"matcher={s['matcher']}"
            w.writerow(head + [tail[c] for c in RESULT_COLUMNS])
        return buf.getvalue()

    def to_jsonl(self) -> str:
        lines = [json.dumps({"cell": c, "record": r.to_json()}, sort_keys=True)
                 for c, r in zip(self.cells, self.records)]
        return "".join(line + "\n" for line in lines)


def sweep(grid: dict, out: Optional[Union[str, Path]] = None, seed: int = 0,
          offline: str = "both", workers: int = 1) -> SweepTable:
    """Run every cell of ``grid`` and optionally write ``out`` (CSV), a ``.jsonl``
    mirror and a ``.meta.json`` with the volatile run metadata.

    Cells may run in parallel; output order is always grid order.
    """
    if offline not in OFFLINE_MODES:
        raise ParameterError(f"offline mode must be one of {OFFLINE_MODES}")
    cells = expand_grid(grid)
    jobs = [(i, c, seed, offline) for i, c in enumerate(cells)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, jobs))
    else:
        records = [_run_cell(j) for j in jobs]
    table = SweepTable([k for k in GRID_KEYS if k in grid], cells, records)
    if out is not None:
        out = Path(out)
        out.write_text(table.to_csv())
        out.with_suffix(".jsonl").write_text(table.to_jsonl())
        meta = {"created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "version": __version__,
                "seed": seed, "offline": offline, "grid": grid, "cells": len(cells)}
        out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return table
