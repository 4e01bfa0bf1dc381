"""Offline optima and explicit feasible pairings used as competitive-ratio baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_instance
from .costfn import TimeCostFunction
from .engine import Match, SimulationResult, evaluate_costs
from .instance import Instance, Request, example3_offline_pairing
from .metric import MetricSpace

DP_CAP = 22
BRUTE_CAP = 12


class CapacityError(ValueError):
    pass


class NotApplicableError(ValueError):
    pass


@dataclass
class OfflineMatching:
    pairs: list
    cost: float
    exact: bool
    detail: dict = field(default_factory=dict)

    def as_matches(self, instance: Instance) -> list:
        reqs = instance.by_id()
        return [Match(a, b, max(reqs[a].arrival, reqs[b].arrival)) for a, b in self.pairs]

    def audit(self, instance: Instance) -> SimulationResult:
        return evaluate_costs(self.as_matches(instance), instance)

    def to_json(self, instance: Optional[Instance] = None) -> dict:
        out = {"pairs": [list(p) for p in self.pairs], "total": self.cost, "exact": self.exact}
        if instance is not None:
            res = self.audit(instance)
            out.update({"space_cost": res.space_cost, "time_cost": res.time_cost,
                        "matches": [m.to_json() for m in res.matches]})
        if self.detail:
            out["meta"] = self.detail
        return out


def pair_cost(a: Request, b: Request, space: MetricSpace, f: TimeCostFunction) -> float:
    """Cost of matching ``a`` and ``b`` as soon as both are present."""
    if a.id == b.id:
        raise ValueError("a request cannot be paired with itself")
    return space.distance(a.point, b.point) + f(abs(a.arrival - b.arrival))


def cost_matrix(instance: Instance) -> np.ndarray:
    reqs = instance.requests
    n = len(reqs)
    c = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            c[i, j] = c[j, i] = pair_cost(reqs[i], reqs[j], instance.space, instance.f)
    return c


def _check_even(n):
    if n % 2:
        raise ValueError(f"odd number of requests ({n})")


def _popcount(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(x)


def _reachable_sets(n: int) -> np.ndarray:
    """Even-size remainders reachable from the full set by repeatedly removing
    its lowest element together with one other element.

    Everything below the remainder's minimum must be gone, and at most as many
    removed elements may lie above that minimum as below it.
    """
    S = np.arange(1 << n, dtype=np.int64)
    removed = ((1 << n) - 1) ^ S
    low = S & -S
    below_count = np.where(S == 0, n, _popcount(low - 1)).astype(np.int64)
    below = (np.int64(1) << below_count) - 1
    ok = (removed & below) == below
    ok &= _popcount(removed & ~below) <= below_count
    ok &= _popcount(S) % 2 == 0
    return S[ok]


def optimal_dp(instance: Instance, cap: int = DP_CAP) -> OfflineMatching:
    """Minimum-cost perfect matching by dynamic programming over request subsets.

    ``g[S]`` is the cheapest perfect matching of the request set ``S``; it pairs
    the lowest index in ``S`` with each other member. Layers of equal popcount
    are evaluated with numpy. Among equal-cost choices the smallest partner index
    wins, so the returned pairing is deterministic.
    """
    reqs = instance.requests
    n = len(reqs)
    _check_even(n)
    if n > cap:
        raise CapacityError(f"{n} requests exceed the subset-DP cap of {cap}; use structured bounds")
    if n == 0:
        return OfflineMatching([], 0.0, True)
    c = cost_matrix(instance)
    size = 1 << n
    g = np.full(size, np.inf)
    g[0] = 0.0
    masks = _reachable_sets(n)
    pc = _popcount(masks)
    order = masks[np.argsort(pc, kind="stable")]
    bounds = np.searchsorted(np.sort(pc), np.arange(n + 2))
    bits = np.int64(1) << np.arange(n, dtype=np.int64)
    for layer in range(2, n + 1, 2):
        S = order[bounds[layer]:bounds[layer + 1]]
        if S.size == 0:
            continue
        low = S & -S
        lo_idx = _popcount(low - 1).astype(np.int64)
        rest = S ^ low
        best = np.full(S.shape, np.inf)
        for j in range(n):
            valid = ((rest >> j) & 1).astype(bool)
            if not valid.any():
                continue
            cand = np.where(valid, c[lo_idx, j] + g[rest ^ bits[j]], np.inf)
            np.minimum(best, cand, out=best)
        g[S] = best

    pairs = []
    S = size - 1
    while S:
        low = S & -S
        i = low.bit_length() - 1
        target = g[S]
        for j in range(i + 1, n):
            if S >> j & 1 and c[i, j] + g[S ^ low ^ (1 << j)] == target:
                pairs.append((reqs[i].id, reqs[j].id))
                S ^= low | (1 << j)
                break
        else:  # pragma: no cover
            raise RuntimeError("DP reconstruction failed")
    return OfflineMatching(pairs, float(g[size - 1]), True, {"method": "subset_dp", "n": n})


def brute_force_enumerate(instance: Instance, cap: int = BRUTE_CAP) -> OfflineMatching:
    """Exhaustive enumeration of all (n-1)!! perfect matchings."""
    reqs = instance.requests
    n = len(reqs)
    _check_even(n)
    if n > cap:
        raise CapacityError(f"{n} requests exceed the enumeration cap of {cap}")
    space, f = instance.space, instance.f
    best_cost, best_pairs = math.inf, []

    def rec(remaining, acc, pairs):
        nonlocal best_cost, best_pairs
        if not remaining:
            if acc < best_cost:
                best_cost, best_pairs = acc, list(pairs)
            return
        first, rest = remaining[0], remaining[1:]
        for k, other in enumerate(rest):
            pairs.append((first.id, other.id))
            rec(rest[:k] + rest[k + 1:], acc + pair_cost(first, other, space, f), pairs)
            pairs.pop()

    rec(list(reqs), 0.0, [])
    if n == 0:
        best_cost = 0.0
    return OfflineMatching(best_pairs, best_cost, True, {"method": "enumeration", "n": n})


def pairing_cost(instance: Instance, pairs) -> float:
    reqs = instance.by_id()
    return math.fsum(pair_cost(reqs[a], reqs[b], instance.space, instance.f) for a, b in pairs)


def _consecutive_pairs(ids):
    if len(ids) % 2:
        raise NotApplicableError("odd run of requests where an even one was expected")
    return [(ids[i], ids[i + 1]) for i in range(0, len(ids), 2)]


def _round_pairing(instance: Instance, ids) -> list:
    """Pair the round's single opening request with the first request at the
    point carrying an odd remainder; everything else consecutively in place."""
    reqs = instance.by_id()
    rs = sorted((reqs[i] for i in ids), key=lambda r: (r.arrival, r.id))
    if not rs:
        return []
    opener = rs[0]
    by_point: dict = {}
    for r in rs[1:]:
        by_point.setdefault(r.point, []).append(r.id)
    odd = [p for p, lst in by_point.items() if len(lst) % 2]
    if len(odd) != 1 or opener.point in by_point:
        raise NotApplicableError("round does not have the single-opener / single-odd-point shape")
    p = odd[0]
    pairs = [(opener.id, by_point[p][0])]
    by_point[p] = by_point[p][1:]
    for q in sorted(by_point):
        pairs += _consecutive_pairs(by_point[q])
    return pairs


def _round_bound_formula(instance: Instance, construction: str, rd: dict) -> float:
    params = instance.meta.get("params", {})
    f, delta = instance.f, params["delta"]
    k, n, tau = params["k"], params["n"], params["tau"]
    if construction == "adversary_round":
        return delta + (k * k * n / 2) * f(tau) + f(tau)
    return delta + n * (k + 1) ** 2 * f(tau)


def structured_round_bound(instance: Instance, construction: str, round_index: Optional[int] = None) -> OfflineMatching:
    """Explicit feasible pairing for lower-bound constructions (an upper bound on OPT).

    Works round by round using the ``rounds`` metadata written by the adaptive
    adversary (``adversary_round``) or the permuted staircase generator
    (``randomized_round``). With ``round_index`` only that round is paired.
    """
    if construction not in ("adversary_round", "randomized_round"):
        raise NotApplicableError(f"unknown construction {construction!r}")
    if instance.meta.get("construction") != construction or "rounds" not in instance.meta:
        raise NotApplicableError(
            f"instance metadata says {instance.meta.get('construction')!r}, not {construction!r}")
    rounds = instance.meta["rounds"]
    idx = range(len(rounds)) if round_index is None else [round_index]
    pairs, per_round, formula = [], [], []
    for r in idx:
        rp = _round_pairing(instance, rounds[r]["ids"])
        pairs += rp
        per_round.append(pairing_cost(instance, rp))
        formula.append(_round_bound_formula(instance, construction, rounds[r]))
    return OfflineMatching(pairs, math.fsum(per_round), False,
                           {"construction": construction, "per_round": per_round,
                            "formula_bound": formula})


def internal_only_pairing(instance: Instance) -> OfflineMatching:
    pairs = example3_offline_pairing(instance)
    return OfflineMatching(pairs, pairing_cost(instance, pairs), False, {"construction": "internal_only"})


class OfflineOptimum(BaseEstimator):
    """Estimator wrapper around the exact offline solvers.

    Parameters
    ----------
    method : {"dp", "brute"}
    cap : int, optional
        Size cap passed to the solver.
    """

    def __init__(self, method: str = "dp", cap: Optional[int] = None):
        self.method = method
        self.cap = cap

    def fit(self, instance: Instance, y=None):
        check_instance(instance)
        if self.method == "dp":
            sol = optimal_dp(instance, self.cap or DP_CAP)
        elif self.method == "brute":
            sol = brute_force_enumerate(instance, self.cap or BRUTE_CAP)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.matching_ = sol
        self.pairs_ = sol.pairs
        self.cost_ = sol.cost
        return self
