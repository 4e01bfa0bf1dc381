import itertools

import pytest
import hypothesis.strategies as st
from hypothesis import given, settings

from mpmd.costfn import TimeCostFunction
from mpmd.instance import Request, example2_tau, gen_example1, gen_example2, gen_random, gen_randomized_lb
from mpmd.metric import build_uniform
from mpmd.offline import (CapacityError, NotApplicableError, OfflineOptimum, brute_force_enumerate,
                          cost_matrix, internal_only_pairing, optimal_dp, pair_cost, pairing_cost,
                          structured_round_bound)

from helpers import make_instance

SQ = TimeCostFunction.monomial(2)


def test_pair_cost():
    sp = build_uniform(2, 1.0)
    assert pair_cost(Request(0, 0, 0.0), Request(1, 0, 0.5), sp, SQ) == pytest.approx(0.25)
    assert pair_cost(Request(0, 0, 0.0), Request(1, 1, 0.0), sp, SQ) == 1.0
    sp2 = build_uniform(2, 2.0)
    a, b = Request(0, 0, 1.0), Request(1, 1, 4.0)
    assert pair_cost(a, b, sp2, SQ) == 11.0 == pair_cost(b, a, sp2, SQ)


def test_two_requests():
    inst = make_instance([(0, 0.0), (1, 2.0)])
    for solve in (optimal_dp, brute_force_enumerate):
        sol = solve(inst)
        assert sol.pairs == [(0, 1)] and sol.cost == pytest.approx(5.0) and sol.exact


def test_four_requests_three_pairings():
    inst = make_instance([(0, 0.0), (1, 0.1), (0, 1.0), (1, 1.2)])
    c = cost_matrix(inst)
    best = min(c[0, 1] + c[2, 3], c[0, 2] + c[1, 3], c[0, 3] + c[1, 2])
    assert brute_force_enumerate(inst).cost == pytest.approx(best)
    assert optimal_dp(inst).cost == pytest.approx(best)


def test_example1_optimum():
    inst = gen_example1(2, 1.0, 0.01, 1.0)
    assert optimal_dp(inst).cost <= 1.0 + 2 * 0.01 ** 2 + 1e-9


def test_example2_optimum():
    tau = example2_tau(4, 1.0, 0.1, SQ)
    inst = gen_example2(4, tau, 1.0, 1.0, 0.1, SQ)
    assert optimal_dp(inst).cost <= 2 * SQ(tau) + 1.0 + 1e-9


def test_caps():
    big = gen_random(build_uniform(2, 1.0), 14, 5.0, 0)
    with pytest.raises(CapacityError):
        brute_force_enumerate(big)
    with pytest.raises(CapacityError):
        optimal_dp(big, cap=12)
    with pytest.raises(ValueError):
        optimal_dp(make_instance([(0, 0.0)]))


def test_empty():
    sol = optimal_dp(make_instance([]))
    assert sol.pairs == [] and sol.cost == 0


def test_audit_matches_cost():
    inst = gen_random(build_uniform(3, 1.0), 10, 3.0, 4)
    sol = optimal_dp(inst)
    assert sol.audit(inst).total_cost == pytest.approx(sol.cost, abs=1e-9)
    assert pairing_cost(inst, sol.pairs) == pytest.approx(sol.cost, abs=1e-9)
    body = sol.to_json(inst)
    assert body["exact"] is True and len(body["matches"]) == 5


def test_deterministic_pairing():
    inst = make_instance([(0, 0.0), (0, 1.0), (0, 2.0), (0, 3.0)], alpha=1.0)
    assert optimal_dp(inst).pairs == optimal_dp(inst).pairs


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(1, 5), st.sampled_from([1.5, 2.0, 3.0]), st.integers(0, 10**6))
def test_dp_matches_brute_force(k, half, alpha, seed):
    inst = gen_random(build_uniform(k, 1.0), 2 * half, 4.0, seed, TimeCostFunction.monomial(alpha))
    assert optimal_dp(inst).cost == pytest.approx(brute_force_enumerate(inst).cost, abs=1e-9)


def test_dp_below_every_pairing():
    inst = gen_random(build_uniform(3, 1.0), 8, 3.0, 9)
    ids = [r.id for r in inst.requests]
    opt = optimal_dp(inst).cost

    def pairings(rest):
        if not rest:
            yield []
            return
        a = rest[0]
        for i in range(1, len(rest)):
            for tail in pairings(rest[1:i] + rest[i + 1:]):
                yield [(a, rest[i])] + tail

    assert all(pairing_cost(inst, p) >= opt - 1e-12 for p in itertools.islice(pairings(ids), 200))


def test_structured_randomized_round():
    inst = gen_randomized_lb(4, 1.0, 1.0)
    sb = structured_round_bound(inst, "randomized_round")
    p = inst.meta["params"]
    assert not sb.exact
    assert sb.cost <= p["delta"] + p["n"] * (p["k"] + 1) ** 2 * SQ(p["tau"]) + 1e-9
    assert sb.cost >= optimal_dp(inst).cost - 1e-9
    assert sb.audit(inst).total_cost == pytest.approx(sb.cost)


def test_structured_not_applicable():
    with pytest.raises(NotApplicableError):
        structured_round_bound(gen_example1(2, 1.0, 0.1, 1.0), "adversary_round")
    with pytest.raises(NotApplicableError):
        structured_round_bound(gen_randomized_lb(3, 1.0, 1.0), "adversary_round")
    with pytest.raises(NotApplicableError):
        structured_round_bound(gen_randomized_lb(3, 1.0, 1.0), "bogus")


def test_internal_only():
    inst = make_instance([(0, 0.0), (1, 0.5), (0, 1.0), (1, 2.0)])
    sol = internal_only_pairing(inst)
    assert sol.cost == pytest.approx(1.0 + 1.5 ** 2)


def test_estimator():
    inst = gen_random(build_uniform(2, 1.0), 6, 2.0, 1)
    a = OfflineOptimum().fit(inst)
    b = OfflineOptimum(method="brute").fit(inst)
    assert a.cost_ == pytest.approx(b.cost_)
    assert OfflineOptimum(method="brute", cap=4).get_params() == {"method": "brute", "cap": 4}
    with pytest.raises(ValueError):
        OfflineOptimum(method="lp").fit(inst)
