"""Adaptive lower-bound source for deterministic matchers on a uniform metric.

Each round opens with one request at ``v0`` and then, iteration by iteration,
feeds a staircase of requests to every point not yet connected to ``v0`` by the
matcher's external matches. Once the connected set stops growing (or covers
every point) a single extra request closes the round.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx

from .costfn import TimeCostFunction
from .engine import AdaptiveSource, Match, SimulationResult, round_cost, simulate_adaptive
from .instance import TIE_REL, Instance, ParameterError, Request, _even_n
from .metric import build_uniform
from .offline import NotApplicableError

CONSTRUCTION = "adversary_round"


@dataclass(frozen=True)
class AdversaryConfig:
    """Parameters of the adaptive construction.

    Give either ``tau`` or ``n``. ``n`` is forced even and ``tau`` recomputed as
    ``T / n`` so that ``f(n * tau) = k * delta`` holds exactly.
    """

    K: int
    delta: float = 1.0
    tau: Optional[float] = None
    rounds: int = 1
    f: TimeCostFunction = field(default_factory=TimeCostFunction)
    n: Optional[int] = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise ParameterError(f"K must be an integer >= 2, got {self.K!r}")
        if not self.delta > 0:
            raise ParameterError("delta must be positive")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise ParameterError("rounds must be a positive integer")
        if (self.tau is None) == (self.n is None):
            raise ParameterError("give exactly one of tau and n")
        if self.tau is not None and not self.tau > 0:
            raise ParameterError("tau must be positive")
        if self.n is not None and (int(self.n) != self.n or self.n < 2 or self.n % 2):
            raise ParameterError(f"n must be an even integer >= 2, got {self.n!r}")

    @property
    def k(self) -> int:
        return int(self.K) - 1

    @property
    def T(self) -> float:
        return self.f.inverse(self.k * self.delta)

    @property
    def n_eff(self) -> int:
        return int(self.n) if self.n is not None else _even_n(self.T, self.tau)

    @property
    def tau_eff(self) -> float:
        return self.T / self.n_eff

    def params(self) -> dict:
        return {"K": int(self.K), "k": self.k, "n": self.n_eff, "tau": self.tau_eff, "T": self.T,
                "delta": self.delta, "rounds": int(self.rounds), "f": self.f.to_spec()}

    @classmethod
    def parse(cls, text: str) -> "AdversaryConfig":
        """Parse ``adv5:K=<k>,delta=<d>,n=<n>,m=<m>`` (``tau=`` and ``f=`` also accepted)."""
        m = re.fullmatch(r"\s*adv5:(.*)", text)
        if not m:
            raise ParameterError(f"not an adversary spec: {text!r}")
        kw = {}
        for part in filter(None, (p.strip() for p in m.group(1).split(","))):
            if "=" not in part:
                raise ParameterError(f"bad adversary field {part!r}")
            key, val = (s.strip() for s in part.split("=", 1))
            try:
                if key == "K":
                    kw["K"] = int(val)
                elif key == "delta":
                    kw["delta"] = float(val)
                elif key == "n":
                    kw["n"] = int(val)
                elif key == "tau":
                    kw["tau"] = float(val)
                elif key == "m":
                    kw["rounds"] = int(val)
                elif key == "f":
                    kw["f"] = TimeCostFunction.parse(val)
                else:
                    raise ParameterError(f"unknown adversary field {key!r}")
            except ValueError as exc:
                if isinstance(exc, ParameterError):
                    raise
                raise ParameterError(f"bad value for {key}: {val!r}") from exc
        if "K" not in kw:
            raise ParameterError("adversary spec needs K")
        return cls(**kw)

    def to_spec(self) -> str:
        return (f"adv5:K={int(self.K)},delta={self.delta!r},n={self.n_eff},m={int(self.rounds)},"
                f"f={self.f.to_spec()}")


@dataclass(frozen=True)
class RoundObservation:
    h: int
    edges: tuple
    component: frozenset


def component_of_v0(K: int, edges) -> frozenset:
    g = nx.Graph()
    g.add_nodes_from(range(K))
    g.add_edges_from(edges)
    return frozenset(nx.node_connected_component(g, 0))


class AdversarySource(AdaptiveSource):
    """Adaptive source driving the round construction against one matcher.

    Simultaneous requests at different points are separated by pulling the
    lower-indexed points earlier by ``(K - 1 - i) * 1e-9 * tau``, so the
    highest-indexed point sits exactly on the grid and no request lands after a
    checkpoint.
    """

    def __init__(self, config: AdversaryConfig):
        self.config = config
        self.space = build_uniform(int(config.K), config.delta)
        self.f = config.f
        self._K = int(config.K)
        self._T = config.T
        self._n = config.n_eff
        self._tau = config.tau_eff
        self._eps = TIE_REL * self._tau
        self._next_id = 0
        self._names: dict = {}
        self._rounds: list = []
        self._round = -1
        self._state = "idle"  # idle -> iterating -> closing -> idle
        self._checkpoint = math.inf
        self._start = 0.0
        self._h = 0
        self._comp = frozenset({0})
        self._ids: list = []
        self._observations: list = []
        self._reqs: dict = {}

    # -- helpers --------------------------------------------------------------

    def _emit(self, point: int, time: float, name: str) -> Request:
        req = Request(self._next_id, point, time)
        self._names[self._next_id] = name
        self._ids.append(self._next_id)
        self._next_id += 1
        return req

    def _slot(self, j: int, point: int) -> float:
        return self._start + j * self._tau - (self._K - 1 - point) * self._eps

    def _iteration(self) -> list:
        h, n = self._h, self._n
        outside = [i for i in range(self._K) if i not in self._comp]
        batch = []
        for j in range((h - 1) * n + 1, h * n + 1):
            for i in outside:
                batch.append(self._emit(i, self._slot(j, i), f"r{self._round}:v{i}#{j}"))
        self._checkpoint = self._start + h * self._T
        return batch

    def _open_round(self, start: float) -> list:
        self._round += 1
        self._start = start
        self._h = 1
        self._comp = frozenset({0})
        self._ids = []
        self._observations = []
        opener = self._emit(0, start, f"r{self._round}:v0#0")
        self._state = "iterating"
        return [opener] + self._iteration()

    def _observe_graph(self, matches: list) -> RoundObservation:
        lo, hi = self._start, self._start + self._h * self._T
        ids = set(self._ids)
        edges = set()
        for m in matches:
            if m.kind != "external" or m.a not in ids or m.b not in ids:
                continue
            ra, rb = self._reqs[m.a], self._reqs[m.b]
            if lo <= ra.arrival <= hi and lo <= rb.arrival <= hi and m.time <= hi:
                edges.add(tuple(sorted((ra.point, rb.point))))
        comp = component_of_v0(self._K, edges)
        return RoundObservation(self._h, tuple(sorted(edges)), comp)

    # -- protocol -------------------------------------------------------------

    def observe(self, matches: list, now: float) -> Optional[list]:
        if self._state == "idle":
            if self._round + 1 >= self.config.rounds:
                return None
            start = 0.0 if self._round < 0 else now + self._T
            batch = self._open_round(start)
            self._remember(batch)
            return batch
        if self._state == "iterating":
            obs = self._observe_graph(matches)
            if not self._comp <= obs.component:
                raise AssertionError(f"component shrank from {sorted(self._comp)} to {sorted(obs.component)}")
            self._observations.append(obs)
            prev, cur = self._comp, obs.component
            if prev != cur and len(cur) != self._K:
                self._comp = cur
                self._h += 1
                batch = self._iteration()
                self._remember(batch)
                return batch
            last_point = min(i for i in range(self._K) if i not in prev)
            t = self._start + self._h * self._T + self._tau
            final = self._emit(last_point, t, f"r{self._round}:v{last_point}#final")
            self._rounds.append({"start": self._start, "end": None, "h_r": self._h,
                                 "last_point": last_point, "ids": list(self._ids),
                                 "components": [sorted(o.component) for o in self._observations],
                                 "edges": [[list(e) for e in o.edges] for o in self._observations]})
            self._state = "closing"
            self._checkpoint = math.inf
            self._remember([final])
            return [final]
        # closing: the engine drained; round is complete
        self._rounds[-1]["end"] = now
        self._state = "idle"
        return self.observe(matches, now)

    def _remember(self, batch):
        for r in batch:
            self._reqs[r.id] = r

    def next_checkpoint(self) -> float:
        return self._checkpoint

    def metadata(self) -> dict:
        return {"generator": "adversary", "construction": CONSTRUCTION, "spec": self.config.to_spec(),
                "params": self.config.params(), "rounds": [dict(r) for r in self._rounds],
                "names": dict(self._names)}


def adaptive_lb_source(config: AdversaryConfig) -> AdversarySource:
    return AdversarySource(config)


def run_adversary(matcher, config: AdversaryConfig, trace: bool = False) -> tuple:
    """Play the construction against ``matcher``; returns ``(instance, result)``."""
    return simulate_adaptive(matcher, adaptive_lb_source(config), trace=trace)


# -- audits -------------------------------------------------------------------

@dataclass
class FactReport:
    facts: dict

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.facts.values())

    def as_dict(self) -> dict:
        return {"passed": self.passed, "facts": self.facts}


def verify_round_facts(instance: Instance, matches, config: AdversaryConfig) -> FactReport:
    """Check the four structural facts of each adversary round.

    1. request count per round at most ``k^2 n + 2``;
    2. exactly one ``v0`` request per round, and an odd count at the point of
       the round's final request;
    3. even counts at every other point;
    4. no match joins requests of different rounds.
    """
    rounds = instance.meta.get("rounds")
    if instance.meta.get("construction") != CONSTRUCTION or not rounds:
        raise NotApplicableError("instance carries no adversary round metadata")
    k, n = config.k, config.n_eff
    reqs = instance.by_id()
    round_of = {}
    for r, rd in enumerate(rounds):
        for i in rd["ids"]:
            round_of[i] = r
    w1, w2, w3, w4 = [], [], [], []
    for r, rd in enumerate(rounds):
        ids = rd["ids"]
        if len(ids) > k * k * n + 2:
            w1.append({"round": r, "count": len(ids), "bound": k * k * n + 2})
        counts: dict = {}
        for i in ids:
            counts[reqs[i].point] = counts.get(reqs[i].point, 0) + 1
        if counts.get(0, 0) != 1:
            w2.append({"round": r, "v0_requests": counts.get(0, 0)})
        last = rd["last_point"]
        if counts.get(last, 0) % 2 != 1:
            w2.append({"round": r, "last_point": last, "count": counts.get(last, 0)})
        for p, c in sorted(counts.items()):
            if p not in (0, last) and c % 2:
                w3.append({"round": r, "point": p, "count": c})
    for m in matches:
        a, b = (m.a, m.b) if isinstance(m, Match) else (m[0], m[1])
        ra, rb = round_of.get(a), round_of.get(b)
        if ra != rb:
            w4.append({"a": a, "b": b, "rounds": [ra, rb]})
    facts = {}
    for name, w in (("fact1", w1), ("fact2", w2), ("fact3", w3), ("fact4", w4)):
        facts[name] = {"passed": not w, "witnesses": w}
    return FactReport(facts)


def per_round_costs(instance: Instance, result: SimulationResult) -> list:
    return [round_cost(result, instance, rd["ids"]) for rd in instance.meta["rounds"]]
