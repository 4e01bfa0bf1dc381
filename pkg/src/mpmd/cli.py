"""Command line entry point: ``mpmd <command> ...``.

Exit codes: 0 success, 1 invariant violation, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adversary import AdversaryConfig, per_round_costs, run_adversary, verify_round_facts
from .engine import AuditError, IncompleteMatchingError, MatcherProtocolError, evaluate_costs, simulate
from .harness import (OFFLINE_MODES, ExperimentError, ExperimentSpec, offline_baseline,
                      parse_source, resolve_matcher, run_experiment, sweep, _theta_of)
from .instance import InstanceParseError, ParameterError, dumps_instance
from .metric import MetricValidationError
from .offline import DP_CAP, CapacityError, NotApplicableError, optimal_dp, structured_round_bound

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (ParameterError, InstanceParseError, MetricValidationError, CapacityError,
                NotApplicableError, FileNotFoundError, json.JSONDecodeError, ValueError)
VIOLATIONS = (AuditError, IncompleteMatchingError, MatcherProtocolError, AssertionError)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def _materialize(args):
    src = parse_source(args.instance, args.seed)
    if isinstance(src, AdversaryConfig):
        matcher = resolve_matcher(args.matcher or "algA")
        inst, res = run_adversary(matcher, src, trace=getattr(args, "trace", False))
        return inst, (matcher, res, src)
    return src, None


def cmd_generate(args) -> int:
    inst, _ = _materialize(args)
    _emit(dumps_instance(inst), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.offline:
        rec = run_experiment(ExperimentSpec(args.instance, args.matcher, args.offline, args.seed,
                                            args.out, args.trace))
        if not args.out:
            _emit(_dump(rec.to_json()), None)
        return EXIT_VIOLATION if rec.violations else EXIT_OK
    inst, played = _materialize(args)
    if played:
        matcher, res, _ = played
    else:
        matcher = resolve_matcher(args.matcher, _theta_of(inst))
        res = simulate(matcher, inst, trace=args.trace)
    _emit(res.dumps() + "\n", args.out)
    bad = matcher.invariant_violations() if hasattr(matcher, "invariant_violations") else []
    for v in bad:
        print(f"invariant violation: {v}", file=sys.stderr)
    return EXIT_VIOLATION if bad else EXIT_OK


def cmd_offline(args) -> int:
    inst, _ = _materialize(args)
    out = {"n_requests": len(inst)}
    if args.offline in ("exact", "both") and (args.offline == "exact" or len(inst) <= DP_CAP):
        out["exact"] = optimal_dp(inst).to_json(inst)
    if args.offline in ("structured", "both"):
        cons = inst.meta.get("construction")
        try:
            out["structured"] = structured_round_bound(inst, cons).to_json(inst)
        except NotApplicableError:
            if args.offline == "structured":
                raise
    cost, method, exact = offline_baseline(inst, args.offline)
    out.update(cost=cost, method=method, exact=exact)
    _emit(_dump(out), args.out)
    return EXIT_OK


def cmd_adversary(args) -> int:
    cfg = AdversaryConfig.parse(args.spec)
    matcher = resolve_matcher(args.matcher)
    inst, res = run_adversary(matcher, cfg, trace=args.trace)
    costs = per_round_costs(inst, res)
    sb = structured_round_bound(inst, "adversary_round")
    facts = verify_round_facts(inst, res.matches, cfg)
    floor = cfg.k * cfg.delta
    rows = []
    for r, (c, b, fb) in enumerate(zip(costs, sb.detail["per_round"], sb.detail["formula_bound"])):
        rows.append({"round": r, "matcher_cost": c, "structured": b, "formula_bound": fb,
                     "ratio": c / b, "h_r": inst.meta["rounds"][r]["h_r"],
                     "requests": len(inst.meta["rounds"][r]["ids"])})
    report = {"spec": cfg.to_spec(), "matcher": matcher.spec_string(), "rounds": rows,
              "lower_floor": floor, "facts": facts.as_dict(), "total_cost": res.total_cost}
    _emit(_dump(report), args.out)
    ok = facts.passed and all(c >= floor - 1e-6 for c in costs) and \
        all(row["structured"] <= row["formula_bound"] + 1e-9 for row in rows)
    return EXIT_OK if ok else EXIT_VIOLATION


def _load_grid(text: str) -> dict:
    path = Path(text)
    return json.loads(path.read_text() if path.exists() else text)


def cmd_sweep(args) -> int:
    table = sweep(_load_grid(args.grid), args.out, seed=args.seed, offline=args.offline or "both",
                  workers=args.workers)
    if not args.out:
        sys.stdout.write(table.to_csv())
    bad = [r for r in table.records if r.violations]
    return EXIT_VIOLATION if bad else EXIT_OK


def cmd_verify(args) -> int:
    """Run each matcher on the instance and check every invariant we can."""
    problems = []
    for spec in args.matcher or ["algA", "greedy"]:
        try:
            src = parse_source(args.instance, args.seed)
            matcher = resolve_matcher(spec, _theta_of(src))
            if isinstance(src, AdversaryConfig):
                inst, res = run_adversary(matcher, src)
                facts = verify_round_facts(inst, res.matches, src)
                problems += [f"{spec}: {k} failed: {v['witnesses'][:3]}"
                             for k, v in facts.facts.items() if not v["passed"]]
                problems += [f"{spec}: round {i} cost {c!r} below {src.k * src.delta!r}"
                             for i, c in enumerate(per_round_costs(inst, res)) if c < src.k * src.delta - 1e-6]
            else:
                inst = src
                res = simulate(matcher, inst)
            audit = evaluate_costs(res.matches, inst)
            if abs(audit.total_cost - res.total_cost) > 1e-9 * max(1.0, res.total_cost):
                problems.append(f"{spec}: reported cost {res.total_cost!r} != audited {audit.total_cost!r}")
            if hasattr(matcher, "invariant_violations"):
                problems += [f"{spec}: {v}" for v in matcher.invariant_violations()]
            if len(inst) <= DP_CAP:
                opt = optimal_dp(inst).cost
                if res.total_cost < opt * (1 - 1e-9) - 1e-12:
                    problems.append(f"{spec}: online cost {res.total_cost!r} below optimum {opt!r}")
            print(f"{spec}: {len(inst)} requests, cost {res.total_cost:.6g}")
        except VIOLATIONS as exc:
            problems.append(f"{spec}: {type(exc).__name__}: {exc}")
    for p in problems:
        print(f"VIOLATION {p}")
    print("ok" if not problems else f"{len(problems)} violation(s)")
    return EXIT_VIOLATION if problems else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpmd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, instance=True, matcher=True, offline=False):
        if instance:
            sp.add_argument("--instance", required=True,
                            help="instance file or source spec, e.g. ex1:n=10 or adv5:K=3,n=4,m=2")
        if matcher:
            sp.add_argument("--matcher", default="algA", help="algA, greedy, s1:<theta>, s2:<theta>, s3:<theta>")
        sp.add_argument("--offline", choices=OFFLINE_MODES, default=None if not offline else "both")
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--trace", action="store_true", help="keep the event log")

    sp = sub.add_parser("generate", help="write an instance file")
    common(sp, matcher=False)
    sp.add_argument("--matcher", default=None, help="matcher that plays against an adv5 source")
    sp.set_defaults(func=cmd_generate)
    sp = sub.add_parser("simulate", help="run a matcher; with --offline also report the ratio")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("offline", help="offline optimum or structured pairing")
    common(sp, matcher=False, offline=True)
    sp.add_argument("--matcher", default=None, help="matcher that plays against an adv5 source")
    sp.set_defaults(func=cmd_offline)
    sp = sub.add_parser("adversary", help="play the adaptive construction against a matcher")
    sp.add_argument("--spec", required=True, help="adv5:K=<k>,delta=<d>,n=<n>,m=<m>")
    common(sp, instance=False)
    sp.set_defaults(func=cmd_adversary)
    sp = sub.add_parser("sweep", help="run a parameter grid and write CSV")
    sp.add_argument("--grid", required=True, help="JSON object (inline or file) mapping grid keys to value lists")
    sp.add_argument("--workers", type=int, default=1)
    common(sp, instance=False, matcher=False)
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("verify", help="run invariant checks on an instance")
    sp.add_argument("--instance", required=True)
    sp.add_argument("--matcher", action="append", help="repeatable; default algA and greedy")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc.cause, INPUT_ERRORS) and not isinstance(exc.cause, VIOLATIONS) \
            else EXIT_VIOLATION
    except VIOLATIONS as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
