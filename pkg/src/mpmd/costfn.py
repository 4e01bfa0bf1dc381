"""Convex time cost functions ``f`` with closed-form derivative and inverse."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class DomainError(ValueError):
    """Argument outside the domain of a cost function operation."""


@dataclass(frozen=True)
class TimeCostFunction:
    """Delay penalty ``f(t)``.

    ``kind="monomial"`` is ``t**alpha``; ``kind="linear"`` is ``t`` (alpha fixed at 1).
    Instances are immutable and hashable.
    """

    kind: str = "monomial"
    alpha: float = 2.0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in ("monomial", "linear"):
            raise ValueError(f"unknown cost function kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "linear":
            object.__setattr__(self, "alpha", 1.0)
        alpha = float(self.alpha)
        if not alpha > 0 or not math.isfinite(alpha):
            raise ValueError(f"alpha must be a finite positive real, got {self.alpha!r}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def monomial(cls, alpha: float) -> "TimeCostFunction":
        return cls("monomial", alpha)

    @classmethod
    def linear(cls) -> "TimeCostFunction":
        return cls("linear", 1.0)

    @classmethod
    def parse(cls, text: str) -> "TimeCostFunction":
        """Parse ``"monomial:<alpha>"`` or ``"linear"`` (case-insensitive)."""
        s = text.strip().lower()
        if s == "linear":
            return cls.linear()
        head, sep, tail = s.partition(":")
        if head == "monomial" and sep:
            try:
                return cls.monomial(float(tail))
            except ValueError as exc:
                raise ValueError(f"bad cost function spec {text!r}: {exc}") from None
        raise ValueError(f"bad cost function spec {text!r}; expected 'monomial:<alpha>' or 'linear'")

    def to_spec(self) -> str:
        if self.kind == "linear":
            return "linear"
        return f"monomial:{self.alpha!r}"

    def __str__(self):
        return self.to_spec()

    # the three primitives used everywhere else

    def __call__(self, t: float) -> float:
        return evaluate(self, t)

    def rate(self, t: float) -> float:
        return rate(self, t)

    def inverse(self, y: float) -> float:
        return invert(self, y)


def evaluate(f: TimeCostFunction, t: float) -> float:
    if t < 0:
        raise DomainError(f"time cost undefined for negative delay {t!r}")
    if f.kind == "linear":
        return float(t)
    return float(t) ** f.alpha


def rate(f: TimeCostFunction, t: float) -> float:
    """Derivative ``f'(t)``."""
    if t < 0:
        raise DomainError(f"rate undefined for negative delay {t!r}")
    if f.kind == "linear" or f.alpha == 1.0:
        return 1.0
    if t == 0:
        if f.alpha < 1:
            raise DomainError("rate is unbounded at t=0 for alpha < 1")
        return 0.0
    return f.alpha * float(t) ** (f.alpha - 1.0)


def invert(f: TimeCostFunction, y: float) -> float:
    if y < 0:
        raise DomainError(f"inverse undefined for negative cost {y!r}")
    if f.kind == "linear":
        return float(y)
    if y == 0:
        return 0.0
    return float(y) ** (1.0 / f.alpha)


def truncated_value(f: TimeCostFunction, x: float, y: float) -> float:
    """``f(f^-1(x) - f^-1(y))`` when ``x > y``, else 0."""
    if x < 0 or y < 0:
        raise DomainError("truncated value needs nonnegative arguments")
    if x <= y:
        return 0.0
    return evaluate(f, max(invert(f, x) - invert(f, y), 0.0))


@dataclass
class AdmissibilityReport:
    zero_at_origin: bool
    flat_at_origin: bool
    monotone: bool
    convex: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.zero_at_origin and self.flat_at_origin and self.monotone and self.convex

    def as_dict(self) -> dict:
        return {
            "f(0)=0": self.zero_at_origin,
            "f'(0)=0": self.flat_at_origin,
            "monotone": self.monotone,
            "convex": self.convex,
        }


def check_admissible(f: TimeCostFunction, grid: Sequence[float], tol: float = 1e-9) -> AdmissibilityReport:
    """Check f(0)=0, f'(0)=0, monotonicity and convexity on a sorted sample grid.

    Convexity uses divided second differences, so uneven grids are fine.
    """
    pts = [float(x) for x in grid]
    if not pts:
        raise ValueError("grid must be nonempty")
    if any(x < 0 for x in pts) or any(b < a for a, b in zip(pts, pts[1:])):
        raise ValueError("grid must be sorted and nonnegative")

    vals = [evaluate(f, x) for x in pts]
    zero = evaluate(f, 0.0) == 0.0
    try:
        flat = rate(f, 0.0) == 0.0
    except DomainError:
        flat = False
    monotone = all(b >= a - tol for a, b in zip(vals, vals[1:]))

    worst = math.inf
    for i in range(1, len(pts) - 1):
        x0, x1, x2 = pts[i - 1], pts[i], pts[i + 1]
        if x1 == x0 or x2 == x1:
            continue
        s1 = (vals[i] - vals[i - 1]) / (x1 - x0)
        s2 = (vals[i + 1] - vals[i]) / (x2 - x1)
        worst = min(worst, (s2 - s1) / (x2 - x0))
    convex = worst >= -tol
    return AdmissibilityReport(zero, flat, monotone, convex,
                               {"min_second_difference": worst, "grid_size": len(pts)})


def convexity_gap(f: TimeCostFunction, xi: float, eta: float, zeta: float) -> float:
    """LHS minus RHS of the truncated-value superadditivity inequality.

    ``f(f^-1(xi) - f^-1(eta)) + zeta - f(f^-1(xi + zeta) - f^-1(eta))``, which is
    nonnegative for convex invertible ``f`` whenever ``xi >= eta``.
    """
    if xi < eta:
        raise DomainError("need xi >= eta")
    fy = invert(f, eta)
    lhs = evaluate(f, max(invert(f, xi) - fy, 0.0)) + zeta
    rhs = evaluate(f, max(invert(f, xi + zeta) - fy, 0.0))
    return lhs - rhs


def ratio_profile(alpha: float, y: float, xs: Iterable[float]) -> list[float]:
    """``(x**a - y**a) / (x - y)**a`` for each ``x > y``; nonincreasing in ``x`` when a > 1."""
    out = []
    for x in xs:
        if x <= y:
            raise DomainError("ratio profile needs x > y")
        out.append((x**alpha - y**alpha) / (x - y) ** alpha)
    return out
