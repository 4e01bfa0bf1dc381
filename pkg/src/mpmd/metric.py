"""Finite metric spaces over dense integer point indices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

TRIANGLE_TOL = 1e-12


class MetricValidationError(ValueError):
    """Raised when a distance matrix violates a metric axiom.

    ``violations`` holds ``(axiom, witness)`` tuples, where ``witness`` is the
    offending index pair or triple.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{axiom} at {witness}" for axiom, witness in self.violations[:20]]
        more = len(self.violations) - 20
        if more > 0:
            lines.append(f"... and {more} more")
        super().__init__("invalid metric: " + "; ".join(lines))


@dataclass(frozen=True, eq=False)
class MetricSpace:
    distances: np.ndarray
    labels: Optional[tuple] = None
    uniform_delta: Optional[float] = None

    @property
    def k(self) -> int:
        return int(self.distances.shape[0])

    @property
    def points(self) -> range:
        return range(self.k)

    @property
    def is_uniform(self) -> bool:
        return self.uniform_delta is not None

    def distance(self, u: int, v: int) -> float:
        return float(self.distances[u, v])

    def __len__(self):
        return self.k

    def __eq__(self, other):
        if not isinstance(other, MetricSpace):
            return NotImplemented
        return (self.labels == other.labels and self.uniform_delta == other.uniform_delta
                and np.array_equal(self.distances, other.distances))

    def __hash__(self):
        return hash((self.k, self.uniform_delta, self.distances.tobytes()))

    def to_json(self) -> dict:
        if self.is_uniform and self.labels is None:
            return {"kind": "uniform", "k": self.k, "delta": self.uniform_delta}
        out = {"kind": "general", "matrix": self.distances.tolist()}
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MetricSpace":
        kind = obj.get("kind")
        if kind == "uniform":
            return build_uniform(int(obj["k"]), float(obj["delta"]))
        if kind == "general":
            return build_general(obj["matrix"], labels=obj.get("labels"))
        raise ValueError(f"unknown metric kind {kind!r}")


def build_uniform(k: int, delta: float) -> MetricSpace:
    if int(k) != k or k < 1:
        raise ValueError(f"uniform space needs k >= 1, got {k!r}")
    if not delta > 0:
        raise ValueError(f"uniform space needs delta > 0, got {delta!r}")
    k = int(k)
    d = np.full((k, k), float(delta))
    np.fill_diagonal(d, 0.0)
    d.setflags(write=False)
    return MetricSpace(d, None, float(delta))


def build_general(matrix: Sequence[Sequence[float]], labels: Optional[Sequence[str]] = None) -> MetricSpace:
    """Validate a distance matrix and wrap it.

    Every violated axiom is reported with its witness, not just the first.
    """
    d = np.array(matrix, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
        raise MetricValidationError([("shape", tuple(d.shape))])
    if not np.all(np.isfinite(d)):
        raise MetricValidationError([("non-finite entry", tuple(map(int, np.argwhere(~np.isfinite(d))[0])))])
    k = d.shape[0]
    if labels is not None and len(labels) != k:
        raise ValueError(f"{len(labels)} labels for {k} points")

    bad = []
    for i in range(k):
        if d[i, i] != 0:
            bad.append(("nonzero diagonal", (i,)))
    for i in range(k):
        for j in range(i + 1, k):
            if d[i, j] != d[j, i]:
                bad.append(("asymmetry", (i, j)))
            if d[i, j] <= 0 or d[j, i] <= 0:
                bad.append(("nonpositive distance", (i, j)))
    # d[x,z] <= d[x,y] + d[y,z]
    slack = d[:, None, :] - (d[:, :, None] + d[None, :, :])
    for x, y, z in np.argwhere(slack > TRIANGLE_TOL):
        if x != y and y != z and x != z and x < z:
            bad.append(("triangle inequality", (int(x), int(y), int(z))))
    if bad:
        raise MetricValidationError(bad)

    d.setflags(write=False)
    off = d[~np.eye(k, dtype=bool)]
    uniform = float(off[0]) if k > 1 and np.all(off == off[0]) and labels is None else None
    return MetricSpace(d, tuple(labels) if labels is not None else None, uniform)


def extremes(space: MetricSpace) -> tuple[float, float, float]:
    """``(d_min, d_max, d_max / d_min)`` over distinct pairs."""
    if space.k < 2:
        raise ValueError("extremes need at least two points")
    off = space.distances[~np.eye(space.k, dtype=bool)]
    lo, hi = float(off.min()), float(off.max())
    return lo, hi, hi / lo


def effective_delta(space: MetricSpace) -> float:
    """Distance scale used by threshold matchers: delta if uniform, else d_max."""
    if space.is_uniform:
        return float(space.uniform_delta)
    if space.k < 2:
        return 1.0
    return extremes(space)[1]
