"""Event-driven simulation of online matchers, cost accounting and auditing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

from sklearn.base import BaseEstimator

from ._validation import check_instance
from .costfn import TimeCostFunction
from .instance import Instance, Request
from .metric import MetricSpace, effective_delta

AUDIT_TOL = 1e-9
DRAIN_FACTOR = 1e6
MAX_STALLS = 10_000


class IncompleteMatchingError(RuntimeError):
    def __init__(self, msg, stragglers=()):
        self.stragglers = list(stragglers)
        super().__init__(msg)


class MatcherProtocolError(RuntimeError):
    """A matcher emitted a match that breaks the online contract."""


class SourceProtocolError(RuntimeError):
    """An adaptive source emitted requests out of time order."""


class AuditError(ValueError):
    pass


@dataclass(frozen=True)
class Match:
    a: int
    b: int
    time: float
    kind: str = "external"
    initiator: Optional[int] = None

    def ids(self) -> frozenset:
        return frozenset((self.a, self.b))

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "t": self.time, "kind": self.kind, "initiator": self.initiator}


@dataclass
class SimulationResult:
    matches: List[Match]
    space_cost: float
    time_cost: float
    total_cost: float
    per_request_wait: dict
    event_log: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "space_cost": self.space_cost,
            "time_cost": self.time_cost,
            "total": self.total_cost,
            "matches": [m.to_json() for m in self.matches],
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def externals(self) -> list:
        return [m for m in self.matches if m.kind == "external"]


class OnlineMatcher(BaseEstimator):
    """Base class for online matching policies.

    The engine drives a matcher through :meth:`start`, then interleaves
    :meth:`observe_arrival` and :meth:`fire_trigger` calls in time order. Each call
    returns the matches the policy commits to at that instant, already run to a
    fixpoint. :meth:`next_trigger` reports the next time at which the policy's
    enabling conditions can change without a new arrival.

    ``fit(instance)`` runs a full simulation and stores ``result_``.
    """

    def start(self, space: MetricSpace, f: TimeCostFunction) -> None:
        raise NotImplementedError

    def observe_arrival(self, request: Request, now: float) -> list:
        raise NotImplementedError

    def next_trigger(self, now: float) -> Optional[float]:
        return None

    def fire_trigger(self, time: float) -> list:
        return []

    def finalize(self, horizon: float) -> list:
        return []

    def fit(self, instance: Instance, y=None, trace: bool = False):
        self.result_ = simulate(self, check_instance(instance), trace=trace)
        self.matches_ = self.result_.matches
        self.cost_ = self.result_.total_cost
        return self


def time_cost_of(f: TimeCostFunction, arrival: float, matched_at: float) -> float:
    return f(max(matched_at - arrival, 0.0))


def drain_limit(space: MetricSpace, f: TimeCostFunction, last_arrival: float) -> float:
    dmax = effective_delta(space)
    return last_arrival + f.inverse(DRAIN_FACTOR * dmax * space.k)


class _Runner:
    """Shared event loop state for static and adaptive simulation."""

    def __init__(self, matcher: OnlineMatcher, space: MetricSpace, f: TimeCostFunction, trace: bool):
        self.matcher = matcher
        self.space = space
        self.f = f
        self.requests: dict = {}
        self.pending: set = set()
        self.done: set = set()
        self.matches: list = []
        self.now = 0.0
        self.log = [] if trace else None
        self.last_arrival = -math.inf
        matcher.start(space, f)

    def _record(self, emitted: Iterable[Match], when: float, source: str):
        for m in emitted:
            a, b = m.a, m.b
            if a == b or a not in self.pending or b not in self.pending:
                raise MatcherProtocolError(f"{type(self.matcher).__name__} matched non-pending requests {a}, {b} at {when}")
            ra, rb = self.requests[a], self.requests[b]
            if m.time < max(ra.arrival, rb.arrival) or abs(m.time - when) > 1e-9 * max(1.0, abs(when)):
                raise MatcherProtocolError(f"match ({a}, {b}) timed {m.time} during event at {when}")
            kind = "internal" if ra.point == rb.point else "external"
            initiator = m.initiator if kind == "external" else None
            rec = Match(a, b, when, kind, initiator)
            self.pending.discard(a)
            self.pending.discard(b)
            self.done.update((a, b))
            self.matches.append(rec)
            if self.log is not None:
                self.log.append({"t": when, "event": "match", "via": source, **rec.to_json()})

    def arrive(self, req: Request, strict: bool = True):
        if req.id in self.requests:
            raise SourceProtocolError(f"duplicate request id {req.id}")
        if req.arrival < self.now or req.arrival < self.last_arrival or (strict and req.arrival == self.last_arrival):
            raise SourceProtocolError(f"request {req.id} at {req.arrival} is not after t={max(self.now, self.last_arrival)}")
        if not 0 <= req.point < self.space.k:
            raise SourceProtocolError(f"request {req.id} at unknown point {req.point}")
        self.now = req.arrival
        self.last_arrival = req.arrival
        self.requests[req.id] = req
        self.pending.add(req.id)
        if self.log is not None:
            self.log.append({"t": req.arrival, "event": "arrival", "id": req.id, "p": req.point})
        self._record(self.matcher.observe_arrival(req, req.arrival), req.arrival, "arrival")

    def run_triggers(self, until: float, inclusive: bool) -> None:
        stalls = 0
        while True:
            t = self.matcher.next_trigger(self.now)
            if t is None:
                return
            if t > until or (t == until and not inclusive):
                return
            t = max(t, self.now)
            before = len(self.matches)
            self.now = t
            if self.log is not None:
                self.log.append({"t": t, "event": "trigger"})
            self._record(self.matcher.fire_trigger(t), t, "trigger")
            stalls = stalls + 1 if len(self.matches) == before else 0
            if stalls > MAX_STALLS:
                raise MatcherProtocolError(f"{type(self.matcher).__name__} keeps firing without progress at t={t}")

    def drain(self) -> None:
        limit = drain_limit(self.space, self.f, max(self.last_arrival, 0.0))
        while self.pending:
            t = self.matcher.next_trigger(self.now)
            if t is None or t > limit:
                break
            self.run_triggers(t, inclusive=True)
        if self.pending:
            self._record(self.matcher.finalize(limit), max(self.now, self.last_arrival), "finalize")
        if self.pending:
            stragglers = sorted(self.pending)
            raise IncompleteMatchingError(
                f"{type(self.matcher).__name__} left {len(stragglers)} request(s) unmatched past t={limit}: "
                f"{stragglers[:10]}", stragglers)

    def result(self, instance: Instance) -> SimulationResult:
        res = evaluate_costs(self.matches, instance)
        res.event_log = self.log
        return res


def _check_even(instance: Instance):
    if len(instance.requests) % 2:
        raise ValueError(f"instance has an odd number of requests ({len(instance.requests)})")


def simulate(matcher: OnlineMatcher, instance: Instance, trace: bool = False) -> SimulationResult:
    """Feed ``instance`` to ``matcher`` in time order and account the costs.

    At equal timestamps arrivals go before triggers, and lower ids first.
    """
    _check_even(instance)
    run = _Runner(matcher, instance.space, instance.f, trace)
    for req in instance.requests:
        run.run_triggers(req.arrival, inclusive=False)
        run.arrive(req, strict=False)
    run.drain()
    res = run.result(instance)
    res.meta = {"matcher": _matcher_label(matcher), "instance": instance.meta.get("generator")}
    return res


def _matcher_label(matcher) -> str:
    label = getattr(matcher, "spec_string", None)
    return label() if callable(label) else type(matcher).__name__


class AdaptiveSource:
    """Request source that may look at the matcher's decisions.

    The engine calls :meth:`observe` with the matches committed so far (all with
    time <= the current checkpoint) and receives the next batch of requests, or
    ``None`` at end of stream. It then simulates up to :meth:`next_checkpoint`;
    ``math.inf`` there means "until every pending request is matched".
    """

    space: MetricSpace
    f: TimeCostFunction

    def observe(self, matches: list, now: float) -> Optional[list]:
        raise NotImplementedError

    def next_checkpoint(self) -> float:
        raise NotImplementedError

    def metadata(self) -> dict:
        return {}


class StaticSource(AdaptiveSource):
    """Adapter presenting a fixed instance as a one-batch adaptive source."""

    def __init__(self, instance: Instance):
        self.instance = instance
        self.space, self.f = instance.space, instance.f
        self._sent = False

    def observe(self, matches, now):
        if self._sent:
            return None
        self._sent = True
        return list(self.instance.requests)

    def next_checkpoint(self):
        return math.inf

    def metadata(self):
        return dict(self.instance.meta)


def simulate_adaptive(matcher: OnlineMatcher, source: AdaptiveSource, trace: bool = False):
    """Run ``matcher`` against an adaptive ``source``.

    Returns ``(instance, result)`` where ``instance`` materializes every request
    the source emitted; replaying it through :func:`simulate` yields the same matches.
    """
    run = _Runner(matcher, source.space, source.f, trace)
    checkpoint = -math.inf
    batch = source.observe([], 0.0)
    while batch is not None:
        batch = sorted(batch, key=lambda r: (r.arrival, r.id))
        nxt = source.next_checkpoint()
        for req in batch:
            if req.arrival <= checkpoint and checkpoint > -math.inf:
                raise SourceProtocolError(f"request {req.id} at {req.arrival} not after checkpoint {checkpoint}")
            if req.arrival > nxt:
                raise SourceProtocolError(f"request {req.id} at {req.arrival} beyond next checkpoint {nxt}")
            run.run_triggers(req.arrival, inclusive=False)
            run.arrive(req)
        if math.isinf(nxt):
            run.drain()
            checkpoint = max(run.now, run.last_arrival)
        else:
            run.run_triggers(nxt, inclusive=True)
            run.now = max(run.now, nxt)
            checkpoint = nxt
        batch = source.observe(list(run.matches), checkpoint)
    if run.pending:
        run.drain()
    instance = Instance(source.space, source.f, tuple(run.requests.values()), source.metadata())
    _check_even(instance)
    res = run.result(instance)
    res.meta = {"matcher": _matcher_label(matcher), "instance": instance.meta.get("generator")}
    return instance, res


def evaluate_costs(matches: Iterable, instance: Instance) -> SimulationResult:
    """Recompute costs of a perfect matching from scratch.

    ``matches`` may hold :class:`Match` objects or ``(a, b, time)`` tuples.
    """
    reqs = instance.by_id()
    space, f = instance.space, instance.f
    seen: dict = {}
    out, space_cost, waits = [], 0.0, {}
    for m in matches:
        if not isinstance(m, Match):
            a, b, t = m
            m = Match(int(a), int(b), float(t))
        for rid in (m.a, m.b):
            if rid not in reqs:
                raise AuditError(f"match references unknown request {rid}")
            if rid in seen:
                raise AuditError(f"request {rid} matched twice (with {seen[rid]} and {m.ids() - {rid}})")
        if m.a == m.b:
            raise AuditError(f"request {m.a} matched with itself")
        ra, rb = reqs[m.a], reqs[m.b]
        if m.time < max(ra.arrival, rb.arrival):
            raise AuditError(f"match ({m.a}, {m.b}) at {m.time} precedes an arrival")
        seen[m.a], seen[m.b] = m.b, m.a
        kind = "internal" if ra.point == rb.point else "external"
        out.append(Match(m.a, m.b, m.time, kind, m.initiator if kind == "external" else None))
        space_cost += space.distance(ra.point, rb.point)
        waits[m.a] = m.time - ra.arrival
        waits[m.b] = m.time - rb.arrival
    missing = sorted(set(reqs) - set(seen))
    if missing:
        raise AuditError(f"matching is not perfect; unmatched ids {missing[:10]}")
    # sum in request order for reproducible rounding
    time_cost = math.fsum(f(waits[r.id]) for r in instance.requests)
    space_cost = math.fsum(space.distance(reqs[m.a].point, reqs[m.b].point) for m in out)
    return SimulationResult(out, space_cost, time_cost, space_cost + time_cost,
                            {r.id: waits[r.id] for r in instance.requests})


def round_cost(result: SimulationResult, instance: Instance, ids: Iterable[int]) -> float:
    """Cost attributable to a subset of requests: their time costs plus the
    space cost of matches with both ends inside the subset."""
    ids = set(ids)
    reqs = instance.by_id()
    f, space = instance.f, instance.space
    t = math.fsum(f(result.per_request_wait[i]) for i in sorted(ids))
    s = math.fsum(space.distance(reqs[m.a].point, reqs[m.b].point)
                  for m in result.matches if m.a in ids and m.b in ids)
    return s + t
