import json
import math

import pytest

from mpmd.costfn import TimeCostFunction
from mpmd.engine import (AdaptiveSource, AuditError, IncompleteMatchingError, Match, MatcherProtocolError,
                         OnlineMatcher, SourceProtocolError, StaticSource, evaluate_costs, round_cost,
                         simulate, simulate_adaptive)
from mpmd.instance import Request, gen_example1, gen_random
from mpmd.matchers import AlgorithmA, Greedy, StrategyI, StrategyIII
from mpmd.metric import build_uniform

from helpers import make_instance


def test_colocated_pair_internal():
    inst = make_instance([(0, 0.0), (0, 0.5)])
    res = simulate(AlgorithmA(), inst)
    (m,) = res.matches
    assert m.kind == "internal" and m.time == 0.5
    assert res.space_cost == 0 and res.time_cost == pytest.approx(0.25)


def test_timer_crossing_external():
    inst = make_instance([(0, 0.0), (1, 0.1)])
    res = simulate(AlgorithmA(), inst)
    (m,) = res.matches
    assert m.kind == "external" and m.time == pytest.approx(1.0, abs=1e-12)
    assert res.total_cost == pytest.approx(2.81, abs=1e-9)


def test_strategy_one_on_example1_literal_cost():
    # both-waited rule: the last external pair can only go at (n+1)*theta
    n, theta, eps = 10, 1.0, 0.01
    res = simulate(StrategyI(theta), gen_example1(n, theta, eps, 1.0))
    expected = n * (theta - eps) ** 2 + ((n + 1) * theta) ** 2 + theta ** 2 + 1.0
    assert res.total_cost == pytest.approx(expected, abs=1e-6)


def test_empty_instance():
    inst = make_instance([])
    res = simulate(Greedy(), inst)
    assert res.matches == [] and res.total_cost == 0
    audit = evaluate_costs([], inst)
    assert audit.total_cost == 0


def test_odd_instance_rejected():
    with pytest.raises(ValueError):
        simulate(Greedy(), make_instance([(0, 0.0)]))


def test_example1_cheap_pairing_cost():
    n, eps = 10, 0.01
    inst = gen_example1(n, 1.0, eps, 1.0)
    ids = inst.ids_by_name()
    by_id = inst.by_id()
    pairs = [(ids["rho'"], ids["rho_0"])] + [(ids[f"rho_{2 * i - 1}"], ids[f"rho_{2 * i}"]) for i in range(1, n + 1)]
    matches = [(a, b, max(by_id[a].arrival, by_id[b].arrival)) for a, b in pairs]
    res = evaluate_costs(matches, inst)
    assert res.total_cost == pytest.approx(1.0 + n * eps ** 2, abs=1e-9)


def test_audit_errors():
    inst = make_instance([(0, 0.0), (1, 1.0), (0, 2.0), (1, 3.0)])
    with pytest.raises(AuditError, match="not perfect"):
        evaluate_costs([(0, 1, 1.0)], inst)
    with pytest.raises(AuditError, match="precedes"):
        evaluate_costs([(0, 1, 0.5), (2, 3, 3.0)], inst)
    with pytest.raises(AuditError, match="twice"):
        evaluate_costs([(0, 1, 1.0), (1, 2, 2.0)], inst)
    with pytest.raises(AuditError, match="unknown"):
        evaluate_costs([(0, 9, 9.0)], inst)


def test_audit_matches_simulation():
    inst = gen_random(build_uniform(3, 1.0), 12, 5.0, 3)
    for m in (AlgorithmA(), Greedy(), StrategyI(0.5), StrategyIII(0.5)):
        res = simulate(m, inst)
        again = evaluate_costs(res.matches, inst)
        assert abs(again.total_cost - res.total_cost) <= 1e-9
        assert res.total_cost == pytest.approx(res.space_cost + res.time_cost, abs=1e-9)
        times = [x.time for x in res.matches]
        assert times == sorted(times)


class _Lazy(OnlineMatcher):
    def start(self, space, f):
        pass

    def observe_arrival(self, request, now):
        return []


class _Cheater(OnlineMatcher):
    def start(self, space, f):
        self.first = None

    def observe_arrival(self, request, now):
        return [Match(request.id, request.id + 5, now)]


def test_stall_names_stragglers():
    inst = make_instance([(0, 0.0), (1, 1.0)])
    with pytest.raises(IncompleteMatchingError) as err:
        simulate(_Lazy(), inst)
    assert err.value.stragglers == [0, 1]


def test_protocol_violation():
    with pytest.raises(MatcherProtocolError):
        simulate(_Cheater(), make_instance([(0, 0.0), (1, 1.0)]))


def test_static_source_identity():
    inst = gen_random(build_uniform(3, 1.0), 10, 4.0, 11)
    direct = simulate(AlgorithmA(), inst)
    mat, adaptive = simulate_adaptive(AlgorithmA(), StaticSource(inst))
    assert mat.requests == inst.requests
    assert adaptive.matches == direct.matches
    assert adaptive.total_cost == direct.total_cost


def test_trace_replay_deterministic():
    inst = gen_random(build_uniform(4, 1.0), 12, 3.0, 5)
    a = simulate(AlgorithmA(), inst, trace=True)
    b = simulate(AlgorithmA(), inst, trace=True)
    assert a.event_log == b.event_log and a.event_log
    assert a.dumps() == b.dumps()
    body = json.loads(a.dumps())
    assert {"space_cost", "time_cost", "total", "matches"} <= set(body)


class _Backwards(AdaptiveSource):
    def __init__(self):
        self.space = build_uniform(2, 1.0)
        self.f = TimeCostFunction.monomial(2)
        self.step = 0

    def observe(self, matches, now):
        self.step += 1
        if self.step == 1:
            return [Request(0, 0, 1.0)]
        if self.step == 2:
            return [Request(1, 1, 0.5)]
        return None

    def next_checkpoint(self):
        return 1.0 if self.step == 1 else math.inf


def test_source_protocol_error():
    with pytest.raises(SourceProtocolError):
        simulate_adaptive(Greedy(), _Backwards())


def test_round_cost_partition():
    inst = make_instance([(0, 0.0), (0, 1.0), (1, 2.0), (1, 3.0)])
    res = simulate(Greedy(), inst)
    assert round_cost(res, inst, [0, 1]) + round_cost(res, inst, [2, 3]) == pytest.approx(res.total_cost)


def test_fit_api():
    inst = make_instance([(0, 0.0), (1, 0.1)])
    m = AlgorithmA().fit(inst)
    assert m.cost_ == pytest.approx(2.81)
    assert m.get_params() == {"threshold": None, "check_invariants": True}
    with pytest.raises(TypeError):
        AlgorithmA().fit([(0, 0.0)])
