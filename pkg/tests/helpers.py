"""Shared checks for simulation results."""

from mpmd.instance import Instance, Request
from mpmd.metric import build_uniform
from mpmd.costfn import TimeCostFunction


def make_instance(rows, k=2, delta=1.0, alpha=2.0):
    """``rows`` is a list of (point, time); ids follow list order."""
    reqs = tuple(Request(i, p, float(t)) for i, (p, t) in enumerate(rows))
    return Instance(build_uniform(k, delta), TimeCostFunction.monomial(alpha), reqs)


def max_pending_per_point(instance, result):
    """Largest number of simultaneously pending requests at one point, counting
    a request as pending on ``[arrival, match time)``."""
    waits = result.per_request_wait
    worst = 0
    by_point = {}
    for r in instance.requests:
        end = r.arrival + waits[r.id]
        if end > r.arrival:
            by_point.setdefault(r.point, []).append((r.arrival, end))
    for spans in by_point.values():
        events = sorted([(a, 1) for a, _ in spans] + [(b, -1) for _, b in spans], key=lambda e: (e[0], e[1]))
        live = 0
        for _, d in events:
            live += d
            worst = max(worst, live)
    return worst


def name_pairs(instance, matches, kind=None):
    names = instance.names()
    return {frozenset((names[m.a], names[m.b])) for m in matches if kind is None or m.kind == kind}
