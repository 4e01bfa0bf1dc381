"""Online matching policies.

Every policy here matches co-located requests immediately, so each point holds
at most one pending request; state is therefore keyed by point.
"""

from __future__ import annotations

import math
from typing import Optional

from .costfn import TimeCostFunction
from .engine import Match, OnlineMatcher
from .metric import MetricSpace, effective_delta


class _PointwiseMatcher(OnlineMatcher):
    """Shared bookkeeping: one pending slot per point plus an accumulator per
    point that grows at ``f'(t - t0)`` while the slot holds a request from ``t0``."""

    def start(self, space: MetricSpace, f: TimeCostFunction) -> None:
        self.space_ = space
        self.f_ = f
        k = space.k
        self.pending_: list = [None] * k
        self._acc = [0.0] * k
        self._acc_t = [0.0] * k

    # accumulator at point v and time t
    def acc(self, v: int, t: float) -> float:
        req = self.pending_[v]
        if req is None:
            return self._acc[v]
        f, t0 = self.f_, req.arrival
        return self._acc[v] + f(max(t - t0, 0.0)) - f(max(self._acc_t[v] - t0, 0.0))

    def _commit(self, v: int, t: float) -> None:
        self._acc[v] = self.acc(v, t)
        self._acc_t[v] = t

    def _set_acc(self, v: int, value: float, t: float) -> None:
        self._acc[v] = value
        self._acc_t[v] = t

    def _crossing(self, v: int, threshold: float, now: float) -> float:
        """Time at which the accumulator of pending point v reaches ``threshold``."""
        t0 = self.pending_[v].arrival
        f = self.f_
        need = threshold - self.acc(v, now) + f(max(now - t0, 0.0))
        return t0 + f.inverse(max(need, 0.0))

    def _pending_points(self) -> list:
        return [v for v, r in enumerate(self.pending_) if r is not None]

    def _internal(self, req, now) -> list:
        v = req.point
        old = self.pending_[v]
        self._commit(v, now)
        self.pending_[v] = None
        return [Match(old.id, req.id, now, "internal")]

    def observe_arrival(self, request, now):
        v = request.point
        if self.pending_[v] is not None:
            return self._internal(request, now) + self._fixpoint(now)
        self._commit(v, now)
        self.pending_[v] = request
        self._acc_t[v] = now
        return self._fixpoint(now)

    def fire_trigger(self, time):
        return self._fixpoint(time)

    def _external(self, u: int, v: int, now: float, initiator: Optional[int], reset: bool = True) -> Match:
        ru, rv = self.pending_[u], self.pending_[v]
        for p in (u, v):
            self._commit(p, now)
            self.pending_[p] = None
            if reset:
                self._set_acc(p, 0.0, now)
        return Match(ru.id, rv.id, now, "external", initiator)

    def _fixpoint(self, now: float) -> list:
        out = []
        while True:
            pick = self._select(now)
            if pick is None:
                return out
            out.append(self._apply(pick, now))

    def _select(self, now):
        raise NotImplementedError

    def _apply(self, pick, now):
        raise NotImplementedError


class AlgorithmA(_PointwiseMatcher):
    """Timer-and-suspect-set matcher for convex delay costs.

    Each point ``v`` carries a timer ``z_v`` that grows at ``f'(t - t0)`` while a
    request from ``t0`` is pending there and is reset on external matches at
    ``v``. A point set ``psi`` collects likely-misaligned points; it is cleared
    every ``2k`` external matches. With threshold ``d`` (``delta`` on uniform
    spaces, the largest distance otherwise), pending requests at ``u != v`` are
    matched when some ``x`` in ``{u, v}`` has ``d <= z_x < 2d`` and neither point
    is in ``psi``, or ``z_x >= 2d``.

    Parameters
    ----------
    threshold : float, optional
        Override for ``d``.
    check_invariants : bool
        Record invariant violations in ``violations_`` while running.
    """

    def __init__(self, threshold: Optional[float] = None, check_invariants: bool = True):
        self.threshold = threshold
        self.check_invariants = check_invariants

    def spec_string(self) -> str:
        return "algA"

    def start(self, space, f):
        super().start(space, f)
        self.d_ = float(self.threshold) if self.threshold is not None else effective_delta(space)
        self.tol_ = 1e-12 * self.d_
        self.psi_: set = set()
        self.round_ = 0
        self.external_in_round_ = 0
        self.audit_: list = []
        self.round_starts_: list = [{"round": 0, "time": 0.0, "psi": []}]
        self.violations_: list = []

    @property
    def z(self) -> list:
        return list(self._acc)

    def _ge(self, z, thr):
        return z >= thr - self.tol_

    def _qualifies(self, x, z, u, v):
        d = self.d_
        if self._ge(z, 2 * d):
            return "b"
        if self._ge(z, d) and u not in self.psi_ and v not in self.psi_:
            return "a"
        return None

    def _select(self, now):
        pts = self._pending_points()
        if len(pts) < 2:
            return None
        zs = {p: self.acc(p, now) for p in pts}
        best = None
        for i, u in enumerate(pts):
            for v in pts[i + 1:]:
                opts = [(zs[x], x, self._qualifies(x, zs[x], u, v)) for x in (u, v)]
                opts = [o for o in opts if o[2] is not None]
                if not opts:
                    continue
                # larger timer initiates; ties to the smaller index
                zx, x, rule = max(opts, key=lambda o: (o[0], -o[1]))
                outside = (u not in self.psi_) + (v not in self.psi_)
                partner = v if x == u else u
                key = (-outside, -zx, x, partner)
                if best is None or key < best[0]:
                    best = (key, u, v, x, rule, zx)
        return best

    def _apply(self, pick, now):
        _, u, v, x, rule, zx = pick
        psi_before = sorted(self.psi_)
        m = self._external(u, v, now, x)
        if u not in self.psi_ or v not in self.psi_:
            self.psi_ = (self.psi_ - {u, v}) | {x}
        self.external_in_round_ += 1
        rec = {"time": now, "u": u, "v": v, "initiator": x, "rule": rule, "z_initiator": zx,
               "psi_before": psi_before, "psi_after": sorted(self.psi_), "round": self.round_,
               "index_in_round": self.external_in_round_, "z_after": (self._acc[u], self._acc[v]),
               "a": m.a, "b": m.b}
        self.audit_.append(rec)
        if self.check_invariants:
            self._check(rec)
        if self.external_in_round_ == 2 * self.space_.k:
            self.round_ += 1
            self.external_in_round_ = 0
            self.psi_ = set()
            self.round_starts_.append({"round": self.round_, "time": now, "psi": []})
        return m

    def _check(self, rec):
        k = self.space_.k
        if rec["z_after"] != (0.0, 0.0):
            self.violations_.append(f"timers not reset after external match at t={rec['time']}")
        if rec["index_in_round"] > 2 * k:
            self.violations_.append(f"more than 2k externals in round {rec['round']}")
        if not self._ge(rec["z_initiator"], self.d_):
            self.violations_.append(f"external match at t={rec['time']} with initiator timer below threshold")
        if rec["rule"] == "a" and set(rec["psi_before"]) & {rec["u"], rec["v"]}:
            self.violations_.append(f"rule (a) used with an endpoint in psi at t={rec['time']}")
        if not set(rec["psi_after"]) <= set(range(k)):
            self.violations_.append("psi escaped the point set")

    def next_trigger(self, now):
        pts = self._pending_points()
        if len(pts) < 2:
            return None
        best = None
        for v in pts:
            z = self.acc(v, now)
            for thr in (self.d_, 2 * self.d_):
                if z < thr - self.tol_:
                    t = self._crossing(v, thr, now)
                    best = t if best is None else min(best, t)
                    break
        return best

    def fire_trigger(self, time):
        # snap timers that were due to cross at this instant onto the threshold
        for v in self._pending_points():
            z = self.acc(v, time)
            for thr in (self.d_, 2 * self.d_):
                if thr - 1e-9 * self.d_ <= z < thr:
                    self._set_acc(v, thr, time)
        return self._fixpoint(time)

    def invariant_violations(self) -> list:
        """Violations recorded during the last run, plus round-structure checks."""
        out = list(getattr(self, "violations_", []))
        k = self.space_.k
        by_round: dict = {}
        for rec in self.audit_:
            by_round[rec["round"]] = by_round.get(rec["round"], 0) + 1
        for r, c in by_round.items():
            if c > 2 * k:
                out.append(f"round {r} has {c} > 2k external matches")
        for rs in self.round_starts_:
            if rs["psi"]:
                out.append(f"psi not empty at start of round {rs['round']}")
        # psi at the first match of a round must have been empty
        seen = set()
        for rec in self.audit_:
            if rec["round"] not in seen:
                seen.add(rec["round"])
                if rec["psi_before"]:
                    out.append(f"round {rec['round']} started with psi={rec['psi_before']}")
        return out


class StrategyI(_PointwiseMatcher):
    """External match only once both requests have waited at least ``theta``."""

    def __init__(self, theta: float = 1.0):
        self.theta = theta

    def spec_string(self) -> str:
        return f"s1:{self.theta!r}"

    def start(self, space, f):
        super().start(space, f)
        self.tol_ = 1e-12 * max(1.0, self.theta)

    def _select(self, now):
        pts = self._pending_points()
        best = None
        for i, u in enumerate(pts):
            for v in pts[i + 1:]:
                tu, tv = self.pending_[u].arrival, self.pending_[v].arrival
                if now - max(tu, tv) >= self.theta - self.tol_:
                    key = (min(tu, tv), max(tu, tv), u, v)
                    if best is None or key < best[0]:
                        best = (key, u, v)
        return best

    def _apply(self, pick, now):
        _, u, v = pick
        older = u if self.pending_[u].arrival <= self.pending_[v].arrival else v
        return self._external(u, v, now, older, reset=False)

    def next_trigger(self, now):
        pts = self._pending_points()
        times = [max(self.pending_[u].arrival, self.pending_[v].arrival) + self.theta
                 for i, u in enumerate(pts) for v in pts[i + 1:]]
        times = [t for t in times if t > now]
        return min(times) if times else None


class _AccumulatorStrategy(_PointwiseMatcher):
    both = True

    def __init__(self, theta: float = 1.0):
        self.theta = theta

    def start(self, space, f):
        super().start(space, f)
        self.tol_ = 1e-12 * max(1.0, self.theta)

    @property
    def accumulators(self) -> list:
        return list(self._acc)

    def _select(self, now):
        pts = self._pending_points()
        if len(pts) < 2:
            return None
        acc = {p: self.acc(p, now) for p in pts}
        ok = {p: acc[p] >= self.theta - self.tol_ for p in pts}
        best = None
        for i, u in enumerate(pts):
            for v in pts[i + 1:]:
                enabled = (ok[u] and ok[v]) if self.both else (ok[u] or ok[v])
                if not enabled:
                    continue
                x = u if (acc[u], -u) >= (acc[v], -v) else v
                key = (-max(acc[u], acc[v]), -min(acc[u], acc[v]), u, v)
                if best is None or key < best[0]:
                    best = (key, u, v, x)
        return best

    def _apply(self, pick, now):
        _, u, v, x = pick
        return self._external(u, v, now, x)

    def next_trigger(self, now):
        pts = self._pending_points()
        if len(pts) < 2:
            return None
        times = [self._crossing(v, self.theta, now) for v in pts
                 if self.acc(v, now) < self.theta - self.tol_]
        return min(times) if times else None

    def fire_trigger(self, time):
        for v in self._pending_points():
            a = self.acc(v, time)
            if self.theta - 1e-9 * max(1.0, self.theta) <= a < self.theta:
                self._set_acc(v, self.theta, time)
        return self._fixpoint(time)


class StrategyII(_AccumulatorStrategy):
    """Per-point accumulated delay cost since the point's last external match;
    an external match needs both endpoints at ``theta`` or more."""

    both = True

    def spec_string(self) -> str:
        return f"s2:{self.theta!r}"


class StrategyIII(_AccumulatorStrategy):
    """As :class:`StrategyII`, but one endpoint at ``theta`` suffices."""

    both = False

    def spec_string(self) -> str:
        return f"s3:{self.theta!r}"


class Greedy(_PointwiseMatcher):
    """Match any two pending requests the moment the second one arrives."""

    def __init__(self):
        pass

    def spec_string(self) -> str:
        return "greedy"

    def _select(self, now):
        pts = self._pending_points()
        best = None
        for i, u in enumerate(pts):
            for v in pts[i + 1:]:
                key = (self.space_.distance(u, v), min(self.pending_[u].id, self.pending_[v].id),
                       max(self.pending_[u].id, self.pending_[v].id))
                if best is None or key < best[0]:
                    best = (key, u, v)
        return best

    def _apply(self, pick, now):
        _, u, v = pick
        return self._external(u, v, now, None)


def parse_matcher(spec: str) -> OnlineMatcher:
    """Build a matcher from ``algA``, ``s1:<theta>``, ``s2:<theta>``, ``s3:<theta>`` or ``greedy``."""
    s = spec.strip()
    low = s.lower()
    if low in ("alga", "a"):
        return AlgorithmA()
    if low == "greedy":
        return Greedy()
    head, sep, tail = low.partition(":")
    cls = {"s1": StrategyI, "s2": StrategyII, "s3": StrategyIII}.get(head)
    if cls is None or not sep:
        raise ValueError(f"unknown matcher spec {spec!r}")
    try:
        theta = float(tail)
    except ValueError:
        raise ValueError(f"bad theta in matcher spec {spec!r}") from None
    if not theta > 0:
        raise ValueError(f"theta must be positive in {spec!r}")
    return cls(theta=theta)
