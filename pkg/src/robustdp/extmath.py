"""Extended-real arithmetic with the minus-absorbing infinity convention.

Extended reals are plain Python floats: ``math.inf`` and ``-math.inf`` are
legal values, NaN is not (it is rejected at the boundary so every comparison
downstream stays a total order).  Addition uses the convention

    -inf + inf = inf + (-inf) = -inf,

which is what keeps concavity intact when expectations of mixed-sign
unbounded payoffs are propagated backward.  ``minus_integral`` is the matching
expectation: it splits the integrand into positive and negative parts and
only collapses to ``-inf`` when both parts have infinite mass.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

INF = math.inf

#: max allowed |sum(weights) - 1| for a probability vector
WEIGHT_TOL = 1e-12

from .errors import WeightError


def as_extreal(x: float) -> float:
    """Validate and coerce ``x`` to an extended real (NaN rejected)."""
    x = float(x)
    if math.isnan(x):
        raise ValueError("NaN is not an extended real")
    return x


def ext_add(a: float, b: float) -> float:
    """Add two extended reals; any mix of opposite infinities gives ``-inf``."""
    if a == -INF or b == -INF:
        return -INF
    if a == INF or b == INF:
        return INF
    return a + b


def _check_weights(values: Sequence[float], weights: Sequence[float]) -> None:
    if len(values) != len(weights):
        raise WeightError(f"length mismatch: {len(values)} values, {len(weights)} weights")
    total = 0.0
    for w in weights:
        w = float(w)
        if math.isnan(w) or w < 0.0:
            raise WeightError(f"weight {w!r} is not nonnegative")
        total += w
    if abs(total - 1.0) > WEIGHT_TOL:
        raise WeightError(f"weights sum to {total!r}, not 1")


def minus_integral(values: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted expectation under the minus-absorbing convention.

    Returns ``sum w_i v_i+  -  sum w_i v_i-`` when at least one of the two
    partial sums is finite, and ``-inf`` when both are infinite.  Entries with
    weight exactly 0 are ignored even if their value is infinite (the
    measure-theoretic 0 * inf = 0 convention).
    """
    _check_weights(values, weights)
    pos = 0.0
    neg = 0.0
    for v, w in zip(values, weights):
        if w == 0.0:
            continue
        v = as_extreal(v)
        if v > 0.0:
            pos = pos + (INF if v == INF else w * v)
        elif v < 0.0:
            neg = neg + (INF if v == -INF else -w * v)
    if pos == INF and neg == INF:
        return -INF
    return pos - neg


def plus_integral(values: Sequence[float], weights: Sequence[float]) -> float:
    """The mirror convention: collapses to ``+inf`` when both parts blow up."""
    return -minus_integral([-as_extreal(v) for v in values], weights)


def largest_uniform_loss_level(
    distributions: Iterable[tuple[Sequence[float], Sequence[float]]],
    cap: float = 1.0,
) -> float:
    """Largest ``m`` in (0, cap] with ``P{value < -m} >= m`` for every distribution.

    Each distribution is a ``(weights, values)`` pair of equal-length finite
    sequences (atom probabilities and atom values).  The map
    ``g : m -> min over distributions of P{value < -m}`` is a nonincreasing,
    right-continuous step function, constant on the intervals between the
    breakpoints ``{-value_i : value_i < 0}``.  On an interval ``[lo, hi)``
    with step value ``g0``, the largest feasible level is ``min(g0, hi-)``,
    where ``hi-`` is the float just below ``hi``; scanning every interval is
    exact up to one ulp when the supremum sits at an open breakpoint.
    Returns 0.0 when no positive level works.
    """
    dists = [(list(map(float, w)), list(map(float, v))) for w, v in distributions]

    def g(m: float) -> float:
        worst = INF
        for w, v in dists:
            mass = sum(wi for wi, vi in zip(w, v) if vi < -m)
            worst = min(worst, mass)
        return worst

    breaks = {0.0, cap}
    for w, v in dists:
        for vi, wi in zip(v, w):
            if wi > 0.0 and vi < 0.0 and -vi < cap:
                breaks.add(-vi)
    edges = sorted(breaks)
    best = 0.0
    for lo, hi in zip(edges, edges[1:]):
        level = g(lo)
        cand = min(level, math.nextafter(hi, -INF))
        if cand > 0.0 and g(cand) >= cand:
            best = max(best, cand)
    if g(cap) >= cap:
        best = cap
    return best
