"""Requests, instances, the JSON-lines instance codec and instance generators."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import permutations
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .costfn import TimeCostFunction
from .metric import MetricSpace, build_uniform

TIE_REL = 1e-9
DEFAULT_MAX_K = 6


class ParameterError(ValueError):
    """Generator parameters outside their admissible domain."""


class InstanceParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}")


class CalibrationError(RuntimeError):
    def __init__(self, msg: str, trace: list):
        self.trace = trace
        super().__init__(msg)


@dataclass(frozen=True, order=True)
class Request:
    id: int
    point: int
    arrival: float


@dataclass(frozen=True, eq=False)
class Instance:
    space: MetricSpace
    f: TimeCostFunction
    requests: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        reqs = tuple(sorted(self.requests, key=lambda r: (r.arrival, r.id)))
        object.__setattr__(self, "requests", reqs)

    def __len__(self):
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.space == other.space and self.f == other.f
                and self.requests == other.requests and self.meta == other.meta)

    def by_id(self) -> dict:
        return {r.id: r for r in self.requests}

    def names(self) -> dict:
        """Map request id -> human-readable name, when the generator recorded one."""
        return {int(k): v for k, v in self.meta.get("names", {}).items()}

    def ids_by_name(self) -> dict:
        return {v: k for k, v in self.names().items()}

    @property
    def last_arrival(self) -> float:
        return self.requests[-1].arrival if self.requests else 0.0

    def with_requests(self, requests: Iterable[Request], **meta) -> "Instance":
        return replace(self, requests=tuple(requests), meta={**self.meta, **meta})


# -- tie handling ----------------------------------------------------------

def distinct_arrivals(requests: Sequence[Request], scale: Optional[float] = None) -> list:
    """Break equal arrival times by shifting later ids forward.

    The j-th request (by id) of a tie group moves by ``j * eps0`` where
    ``eps0 = 1e-9 * scale`` and ``scale`` defaults to the smallest positive gap
    between distinct arrival times. Already-distinct inputs are returned unchanged.
    """
    reqs = sorted(requests, key=lambda r: (r.arrival, r.id))
    times = sorted({r.arrival for r in reqs})
    if len(times) == len(reqs):
        return reqs
    if scale is None:
        gaps = [b - a for a, b in zip(times, times[1:]) if b > a]
        scale = min(gaps) if gaps else 1.0
    eps0 = TIE_REL * scale
    for _ in range(64):
        out, i = [], 0
        while i < len(reqs):
            j = i
            while j < len(reqs) and reqs[j].arrival == reqs[i].arrival:
                j += 1
            for rank, r in enumerate(reqs[i:j]):
                out.append(r if rank == 0 else replace(r, arrival=r.arrival + rank * eps0))
            i = j
        reqs = sorted(out, key=lambda r: (r.arrival, r.id))
        if len({r.arrival for r in reqs}) == len(reqs):
            return reqs
    raise RuntimeError("could not separate tied arrivals")


def _build(space, f, named_times, meta, scale=None) -> Instance:
    """``named_times``: iterable of (time, point, name). Ids follow (time, point) order."""
    rows = sorted(named_times, key=lambda x: (x[0], x[1]))
    reqs = [Request(i, p, float(t)) for i, (t, p, _) in enumerate(rows)]
    names = {i: name for i, (_, _, name) in enumerate(rows) if name is not None}
    if names:
        meta = {**meta, "names": names}
    return Instance(space, f, tuple(distinct_arrivals(reqs, scale)), meta)


# -- codec -------------------------------------------------------------------

def _fmt_time(t: float) -> str:
    return format(float(t), ".17g")


def _json_key_fix(obj):
    # JSON object keys are strings; keep integer keys readable on the way back
    if isinstance(obj, dict):
        return {str(k): _json_key_fix(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_key_fix(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def dumps_instance(inst: Instance) -> str:
    header = {"space": inst.space.to_json(), "f": inst.f.to_spec(), "meta": _json_key_fix(inst.meta)}
    lines = [json.dumps(header, sort_keys=True)]
    for r in inst.requests:
        lines.append(f'{{"id": {r.id}, "p": {r.point}, "t": {_fmt_time(r.arrival)}}}')
    return "\n".join(lines) + "\n"


def loads_instance(text: str) -> Instance:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise InstanceParseError(1, "missing header line")
    try:
        header = json.loads(lines[0])
        space = MetricSpace.from_json(header["space"])
        f = TimeCostFunction.parse(header.get("f", "monomial:2"))
        meta = header.get("meta", {}) or {}
    except (ValueError, KeyError, TypeError) as exc:
        raise InstanceParseError(1, f"bad header: {exc}") from None

    reqs, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rid, p, t = int(obj["id"]), int(obj["p"]), float(obj["t"])
        except (ValueError, KeyError, TypeError) as exc:
            raise InstanceParseError(lineno, f"bad request record: {exc}") from None
        if rid < 0 or rid in seen:
            raise InstanceParseError(lineno, f"duplicate or negative id {rid}")
        if not 0 <= p < space.k:
            raise InstanceParseError(lineno, f"point {p} outside 0..{space.k - 1}")
        if not (t >= 0 and math.isfinite(t)):
            raise InstanceParseError(lineno, f"bad arrival time {t!r}")
        seen.add(rid)
        reqs.append(Request(rid, p, t))
    return Instance(space, f, tuple(distinct_arrivals(reqs)), meta)


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(dumps_instance(inst))


def load_instance(path) -> Instance:
    return loads_instance(Path(path).read_text())


def codec_roundtrip(inst: Instance) -> Instance:
    return loads_instance(dumps_instance(inst))


# -- examples from the strategy counterexamples --------------------------------

U, V, W = 0, 1, 2


def _default_f(f):
    return f if f is not None else TimeCostFunction.monomial(2.0)


def gen_example1(n: int, theta: float, epsilon: float, delta: float,
                 f: Optional[TimeCostFunction] = None) -> Instance:
    """Two points u, v. ``rho'`` at v at 0; ``rho_2i`` at u at ``i*theta``; ``rho_2i-1`` at ``i*theta - eps``."""
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    if not theta > 0:
        raise ParameterError("theta must be positive")
    if not 0 < epsilon < theta:
        raise ParameterError("epsilon must lie in (0, theta)")
    if not delta > 0:
        raise ParameterError("delta must be positive")
    n = int(n)
    rows = [(0.0, V, "rho'")]
    rows += [(i * theta, U, f"rho_{2 * i}") for i in range(n + 1)]
    rows += [(i * theta - epsilon, U, f"rho_{2 * i - 1}") for i in range(1, n + 1)]
    meta = {"generator": "example1",
            "params": {"n": n, "theta": theta, "epsilon": epsilon, "delta": delta},
            "points": ["u", "v"]}
    return _build(build_uniform(2, delta), _default_f(f), rows, meta)


def example2_window(n: int, theta: float, epsilon: float, f: TimeCostFunction) -> tuple:
    """Open interval of tau with ``theta - eps < (n/2) f(tau) < theta``."""
    lo = f.inverse(max(theta - epsilon, 0.0) * 2.0 / n)
    hi = f.inverse(theta * 2.0 / n)
    return lo, hi


def example2_tau(n: int, theta: float, epsilon: float, f: Optional[TimeCostFunction] = None) -> float:
    """A tau in the middle (in cost) of the admissible window."""
    f = _default_f(f)
    return f.inverse((theta - epsilon / 2.0) * 2.0 / n)


def gen_example2(n: int, tau: float, delta: float, theta: float, epsilon: float,
                 f: Optional[TimeCostFunction] = None) -> Instance:
    f = _default_f(f)
    if int(n) != n or n < 2 or n % 2:
        raise ParameterError(f"n must be an even positive integer, got {n!r}")
    if not (tau > 0 and delta > 0 and theta > 0 and epsilon > 0):
        raise ParameterError("tau, delta, theta, epsilon must be positive")
    n = int(n)
    half = n / 2 * f(tau)
    if not theta - epsilon < half < theta:
        lo, hi = example2_window(n, theta, epsilon, f)
        raise ParameterError(
            f"tau={tau!r} gives (n/2)f(tau)={half!r}, outside ({theta - epsilon!r}, {theta!r}); "
            f"admissible tau window is ({lo!r}, {hi!r})")
    rows = [(0.0, V, "rho'")] + [(i * tau, U, f"rho_{i}") for i in range(n + 1)]
    meta = {"generator": "example2",
            "params": {"n": n, "tau": tau, "delta": delta, "theta": theta, "epsilon": epsilon},
            "points": ["u", "v"]}
    return _build(build_uniform(2, delta), f, rows, meta)


def example3_schedule(n: int, tau: float, T0: float, m: int, offsets=None) -> list:
    """Rows ``(time, point, name)`` of the three-point instance.

    ``offsets`` maps a point to a shift applied to every request at that point
    except the two seeded at time 0.
    """
    off = {U: 0.0, V: 0.0, W: 0.0, **(offsets or {})}
    rows = [(0.0, U, "u0,-1"), (T0 + off[U], U, "u0,0"), (0.0, W, "w0,-1")]
    rows += [(T0 + (n + i) * tau + off[U], U, f"u0,{i}") for i in range(1, 2 * n + 1)]
    rows += [(T0 + i * tau + off[V], V, f"v0,{i}") for i in range(1, 2 * n + 1)]
    rows += [(T0 + i * tau + off[W], W, f"w0,{n + i}") for i in range(1, n + 1)]
    Tj = T0 + (2 * n + 1) * tau
    for j in range(1, m + 1):
        if j > 1:
            Tj += 3 * n * tau
        for i in range(1, 2 * n + 1):
            rows.append((Tj + (2 * n + i - 1) * tau + off[U], U, f"u{j},{i}"))
            rows.append((Tj + (n + i - 1) * tau + off[V], V, f"v{j},{i}"))
            rows.append((Tj + (i - 1) * tau + off[W], W, f"w{j},{i}"))
    return rows


def example3_target_pattern(n: int, m: int) -> list:
    """External matches (as unordered name pairs) Strategy III should produce."""
    pat = [("u0,-1", "w0,-1"), ("u0,0", f"v0,{n}")]
    pat += [(f"u{j},{n}", f"w{j},{2 * n}") for j in range(1, m + 1)]
    for i in range(1, m):
        pat.append((f"u{i},{2 * n}", f"v{i + 1},{n}"))
        pat.append((f"v{i},{2 * n}", f"w{i + 1},{n}"))
    pat.append((f"u{m},{2 * n}", f"v{m},{2 * n}"))
    return pat


def external_name_pairs(inst: Instance, matches) -> set:
    names = inst.names()
    rq = inst.by_id()
    return {frozenset((names[mt.a], names[mt.b])) for mt in matches
            if rq[mt.a].point != rq[mt.b].point}


def _example3_offset_ladder(budget: float, depth: int = 12) -> list:
    cands = []
    for j in range(depth):
        d = budget / 2 ** j
        cands += [d, -d]
    return cands


def gen_example3(n: int, T0: float, m: int, delta: float, theta: float,
                 perturbation_budget: float = 0.0, tau: Optional[float] = None,
                 f: Optional[TimeCostFunction] = None, calibrate: bool = True,
                 streams: Sequence[int] = (U,)) -> Instance:
    """Three-point instance that traps Strategy III into repeated external matches.

    ``tau`` defaults to ``f^-1(theta) / n``. With ``calibrate`` set, a search over
    a single stream offset (dyadic fractions of ``perturbation_budget``, both signs,
    first over ``streams``) looks for arrivals on which Strategy III emits exactly the
    target external-match pattern; failure raises :class:`CalibrationError` carrying
    the per-candidate trace.
    """
    f = _default_f(f)
    if int(n) != n or n < 1 or n % 2 == 0:
        raise ParameterError(f"n must be an odd positive integer, got {n!r}")
    if int(m) != m or m < 1:
        raise ParameterError(f"m must be a positive integer, got {m!r}")
    if not (delta > 0 and theta > 0):
        raise ParameterError("delta and theta must be positive")
    if perturbation_budget < 0:
        raise ParameterError("perturbation budget must be nonnegative")
    n, m = int(n), int(m)
    if tau is None:
        tau = f.inverse(theta) / n
    elif abs(f(n * tau) - theta) > 1e-9 * max(1.0, theta):
        raise ParameterError(f"f(n*tau)={f(n * tau)!r} must equal theta={theta!r}")
    if not T0 > n * tau:
        raise ParameterError(f"T0 must exceed n*tau={n * tau!r}")

    space = build_uniform(3, delta)
    params = {"n": n, "tau": tau, "T0": T0, "m": m, "delta": delta, "theta": theta,
              "perturbation_budget": perturbation_budget}
    base_meta = {"generator": "example3", "params": params, "points": ["u", "v", "w"]}

    def make(offsets):
        meta = {**base_meta, "offsets": {str(k): v for k, v in offsets.items()}}
        return _build(space, f, example3_schedule(n, tau, T0, m, offsets), meta, scale=tau)

    if not calibrate:
        return make({})

    from .engine import simulate
    from .matchers import StrategyIII

    target = {frozenset(p) for p in example3_target_pattern(n, m)}
    trace = []
    candidates = [(None, 0.0)]
    for s in list(streams) + [p for p in (U, V, W) if p not in streams]:
        candidates += [(s, d) for d in _example3_offset_ladder(perturbation_budget)] if perturbation_budget > 0 else []
    for stream, d in candidates:
        offsets = {} if stream is None else {stream: d}
        try:
            inst = make(offsets)
        except ValueError as exc:
            trace.append({"stream": stream, "offset": d, "error": str(exc)})
            continue
        if min(r.arrival for r in inst.requests) < 0:
            continue
        res = simulate(StrategyIII(theta=theta), inst)
        got = external_name_pairs(inst, res.matches)
        if got == target:
            inst.meta["calibrated"] = True
            inst.meta["calibration"] = {"stream": stream, "offset": d}
            return inst
        trace.append({
            "stream": stream, "offset": d,
            "missing": sorted(tuple(sorted(p)) for p in target - got),
            "unexpected": sorted(tuple(sorted(p)) for p in got - target),
        })
    raise CalibrationError(
        f"no offset within budget {perturbation_budget!r} reproduces the target pattern "
        f"({len(trace)} candidates tried)", trace)


def example3_offline_pairing(inst: Instance) -> list:
    """Internal-only pairing: consecutive requests at each point, in arrival order."""
    by_point: dict = {}
    for r in inst.requests:
        by_point.setdefault(r.point, []).append(r.id)
    pairs = []
    for p in sorted(by_point):
        ids = by_point[p]
        if len(ids) % 2:
            raise ValueError(f"odd number of requests at point {p}")
        pairs += [(ids[i], ids[i + 1]) for i in range(0, len(ids), 2)]
    return pairs


# -- random ------------------------------------------------------------------

def gen_random(space: MetricSpace, count: int, horizon: float, seed: int,
               f: Optional[TimeCostFunction] = None) -> Instance:
    if count < 0 or count % 2:
        raise ParameterError(f"count must be even and nonnegative, got {count!r}")
    if not horizon > 0:
        raise ParameterError("horizon must be positive")
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, space.k, size=count)
    ts = np.sort(rng.uniform(0.0, horizon, size=count))
    reqs = [Request(i, int(p), float(t)) for i, (p, t) in enumerate(zip(pts, ts))]
    reqs = distinct_arrivals(reqs)
    # a tie shift could in principle push past the horizon; pull back inside
    reqs = [r if r.arrival < horizon else replace(r, arrival=math.nextafter(horizon, 0)) for r in reqs]
    meta = {"generator": "random", "params": {"count": count, "horizon": horizon, "seed": seed}}
    return Instance(space, _default_f(f), tuple(reqs), meta)


# -- randomized lower-bound family -------------------------------------------

def randomized_lb_scale(K: int, delta: float) -> float:
    """Target value ``f(T) = k! * delta * ln k`` with ``k = K - 1``."""
    k = K - 1
    return math.factorial(k) * delta * math.log(k)


def _even_n(T: float, tau: float) -> int:
    n = 2 * round(T / tau / 2)
    return max(2, int(n))


def gen_randomized_lb(K: int, tau: float, delta: float, sigma=None, rounds: int = 1,
                      gap_policy: float = 0.0, f: Optional[TimeCostFunction] = None,
                      allow_large_k: bool = False) -> Instance:
    """Permuted staircase instance on a K-point uniform space.

    With ``k = K - 1``: point ``sigma(0)`` gets one request at the round start,
    ``sigma(i)`` gets ``n*i`` requests at offsets ``j*tau`` for ``1 <= i < k``, and
    ``sigma(k)`` gets ``k*n + 1``. ``sigma`` is one permutation or a list with one
    permutation per round.
    """
    f = _default_f(f)
    if int(K) != K or K < 2:
        raise ParameterError(f"K must be an integer >= 2, got {K!r}")
    K = int(K)
    if K == 2:
        raise ParameterError("K=2 gives k=1 and scale k! * delta * ln k = 0; use K >= 3")
    if K > DEFAULT_MAX_K and not allow_large_k:
        raise ParameterError(f"K={K} exceeds the default cap {DEFAULT_MAX_K}; pass allow_large_k=True")
    if not (tau > 0 and delta > 0):
        raise ParameterError("tau and delta must be positive")
    if int(rounds) != rounds or rounds < 1:
        raise ParameterError("rounds must be a positive integer")
    if gap_policy < 0:
        raise ParameterError("gap_policy must be nonnegative")
    k = K - 1
    scale = randomized_lb_scale(K, delta)
    T = f.inverse(scale)
    n = _even_n(T, tau)
    tau_eff = T / n

    if sigma is None:
        sigmas = [tuple(range(K))] * rounds
    elif len(sigma) and isinstance(sigma[0], (list, tuple)):
        sigmas = [tuple(s) for s in sigma]
        if len(sigmas) != rounds:
            raise ParameterError(f"{len(sigmas)} permutations for {rounds} rounds")
    else:
        sigmas = [tuple(sigma)] * rounds
    for s in sigmas:
        if sorted(s) != list(range(K)):
            raise ParameterError(f"{s!r} is not a permutation of 0..{K - 1}")

    clearance = f.inverse(2.0 * scale)
    rows, round_meta, start = [], [], 0.0
    for r, s in enumerate(sigmas):
        rrows = [(start, s[0], f"r{r}:v{s[0]}#0")]
        for i in range(1, k + 1):
            cnt = n * i if i < k else k * n + 1
            rrows += [(start + j * tau_eff, s[i], f"r{r}:v{s[i]}#{j}") for j in range(1, cnt + 1)]
        last = max(t for t, _, _ in rrows)
        round_meta.append({"start": start, "end": last, "sigma": list(s), "count": len(rrows)})
        rows += rrows
        start = last + clearance + gap_policy
    meta = {"generator": "randomized_lb", "construction": "randomized_round",
            "params": {"K": K, "k": k, "tau": tau_eff, "tau_requested": tau, "n": n, "T": T,
                       "delta": delta, "rounds": rounds, "gap_policy": gap_policy},
            "rounds": round_meta}
    inst = _build(build_uniform(K, delta), f, rows, meta, scale=tau_eff)
    return _tag_rounds(inst)


def _tag_rounds(inst: Instance) -> Instance:
    """Attach each round's request ids (by time window) to the round metadata."""
    rounds = inst.meta.get("rounds", [])
    for i, rd in enumerate(rounds):
        hi = rounds[i + 1]["start"] if i + 1 < len(rounds) else math.inf
        rd["ids"] = [r.id for r in inst.requests if rd["start"] <= r.arrival < hi]
    return inst


def all_permutations(K: int) -> list:
    return [tuple(p) for p in permutations(range(K))]
