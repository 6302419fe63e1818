"""One-period worst-case utility maximization with certified search radii.

An instance is a finite set of outcome increments with per-outcome wealth
sections, a finite list of extreme priors whose hull is the ambiguity set,
and a reference kernel sitting inside that hull with a quantitative
no-arbitrage margin alpha.  The objective

    psi(x, h) = min over extremes of E[ V(outcome, x + h . Y) ]

is concave in (x, h) (minimum of concave expectations under the
minus-absorbing convention), so the maximizer over the affine hull of the
support can be found by bracketed golden-section (dimension 1) or simplex
search plus coordinatewise refinement (dimension >= 2).  The bound pack
carries the constants that make the search region provably sufficient and
the value provably unbounded below in the initial wealth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ._simplex import solve_lp
from .errors import AssumptionFailure, ParameterError
from .extmath import INF, minus_integral
from .geometry import AffineFrame, affine_hull, quantitative_alpha, zero_in_relative_interior

N0_CAP = 2.0**40
_BRACKET_CAP = 2.0**100
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _safe_pow(base: float, exponent: float) -> float:
    if base < 0.0:
        raise ValueError(f"negative base {base!r} in a bound formula")
    try:
        return base**exponent
    except OverflowError:
        return INF


@dataclass
class OnePeriodInstance:
    increments: np.ndarray  # (n, d)
    extremes: np.ndarray  # (m, n) rows are priors over outcomes
    p_star: np.ndarray  # (n,)
    sections: list[Callable[[float], float]]  # per-outcome wealth sections
    frame: AffineFrame
    alpha_star: float
    gamma_lo: float
    gamma_hi: float
    eta: float
    labels: tuple | None = None  # outcome provenance (e.g. child node ids)

    def __post_init__(self):
        self.increments = np.atleast_2d(np.asarray(self.increments, dtype=float))
        self.extremes = np.atleast_2d(np.asarray(self.extremes, dtype=float))
        self.p_star = np.asarray(self.p_star, dtype=float)
        _check_instance(self)

    @property
    def dim(self) -> int:
        return self.increments.shape[1]


def _check_instance(inst: OnePeriodInstance) -> None:
    if not 0.0 < inst.alpha_star <= 1.0:
        raise AssumptionFailure("qna", message=f"alpha {inst.alpha_star!r} outside (0, 1]")
    glo, ghi, eta = inst.gamma_lo, inst.gamma_hi, inst.eta
    if not (0.0 < glo <= 1.0 <= ghi) or glo == ghi:
        raise AssumptionFailure("ae_one", message=f"need 0 < {glo} <= 1 <= {ghi}, unequal")
    if not (0.0 < eta < 1.0 and glo < eta * ghi):
        raise AssumptionFailure("ae_one", message=f"eta {eta} incompatible with ({glo}, {ghi})")
    # p* must lie in the hull of the extremes: feasibility LP over mixing weights
    m, n = inst.extremes.shape
    A = np.zeros((n + 1, m))
    A[:n, :] = inst.extremes.T
    A[n, :] = 1.0
    b = np.concatenate([inst.p_star, [1.0]])
    res = solve_lp(np.zeros(m), A, b)
    if res.status != "optimal":
        raise AssumptionFailure("p_star", message="reference kernel outside the ambiguity hull")
    charged_star = inst.p_star > 0.0
    charged_any = (inst.extremes > 0.0).any(axis=0)
    pts_star = inst.increments[charged_star]
    pts_all = inst.increments[charged_any]
    ok, _ = zero_in_relative_interior(pts_star)
    if not ok:
        raise AssumptionFailure("p_star", message="0 not in ri of the reference support hull")
    if affine_hull(pts_star).dim != affine_hull(pts_all).dim:
        raise AssumptionFailure(
            "p_star", message="reference support spans a smaller subspace than the union"
        )


def make_instance(
    increments,
    extremes,
    sections: Sequence[Callable[[float], float]],
    gamma: float,
    p_star=None,
    alpha: float | None = None,
    alpha_safety: float = 0.9,
    labels=None,
) -> OnePeriodInstance:
    """Assemble an instance with derived frame, margin and exponents.

    ``p_star`` defaults to the uniform mixture of the extremes; ``alpha`` is
    computed exactly in hull dimension <= 1 and deflated by ``alpha_safety``
    when it comes from the angular grid estimate.
    """
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    extremes = np.atleast_2d(np.asarray(extremes, dtype=float))
    if p_star is None:
        p_star = extremes.mean(axis=0)
    p_star = np.asarray(p_star, dtype=float)
    charged_any = (extremes > 0.0).any(axis=0)
    frame = affine_hull(increments[charged_any])
    if alpha is None:
        alpha, approx = quantitative_alpha(p_star, increments, frame)
        if approx:
            alpha *= alpha_safety
    ghi, glo = max(1.0, gamma), min(1.0, gamma)
    eta = min(0.99, (glo / ghi + 1.0) / 2.0)
    return OnePeriodInstance(
        increments=increments,
        extremes=extremes,
        p_star=p_star,
        sections=list(sections),
        frame=frame,
        alpha_star=float(alpha),
        gamma_lo=glo,
        gamma_hi=ghi,
        eta=eta,
        labels=tuple(labels) if labels is not None else None,
    )


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------

def _values_at(inst: OnePeriodInstance, x: float, h: np.ndarray, charged) -> list[float]:
    wealth = x + inst.increments[charged] @ h
    out = []
    for j, w in zip(np.nonzero(charged)[0], wealth):
        out.append(inst.sections[j](float(w)))
    return out


def _as_h(inst: OnePeriodInstance, h) -> np.ndarray:
    arr = np.asarray(h, dtype=float).reshape(-1)
    if arr.shape != (inst.dim,):
        raise ParameterError(f"strategy must be a {inst.dim}-vector, got shape {arr.shape}")
    return arr


def psi_p(inst: OnePeriodInstance, prior, x: float, h) -> float:
    """E_prior V(., x + h.Y) under the minus-absorbing convention."""
    h = _as_h(inst, h)
    prior = np.asarray(prior, dtype=float)
    charged = prior > 0.0
    vals = _values_at(inst, x, h, charged)
    return minus_integral(vals, prior[charged].tolist())


def psi_robust(inst: OnePeriodInstance, x: float, h) -> float:
    """Worst case over the ambiguity hull; attained at an extreme."""
    h = _as_h(inst, h)
    best = INF
    for row in inst.extremes:
        charged = row > 0.0
        vals = _values_at(inst, x, h, charged)
        best = min(best, minus_integral(vals, row[charged].tolist()))
        if best == -INF:
            break
    return best


# --------------------------------------------------------------------------
# bound constants
# --------------------------------------------------------------------------

@dataclass
class BoundPack:
    c_star: float
    l_star: float
    n0_star: int
    Kbar: float
    K0: Callable[[float], float]
    K1: Callable[[float], float]
    N_of_m: Callable[[float], float]
    sup_neg: Callable[[float], float]
    alpha_star: float
    eta: float
    gamma_lo: float
    gamma_hi: float


def compute_bounds(inst: OnePeriodInstance, C_of_outcome) -> BoundPack:
    """Constants for the certified search radius and the unbounded-below tail.

    ``C_of_outcome`` holds the per-outcome growth constants; their reference
    expectation is c*.  The cash threshold n0* is the smallest integer k >= 1
    such that the reference kernel puts mass at least 1 - alpha/2 on
    ``V(., -k) <= -(1 + 2 c*/alpha)``; the search doubles then bisects, and a
    cap at 2^40 signals that the 'negative enough' assumption fails.
    """
    C = np.asarray(C_of_outcome, dtype=float)
    alpha = inst.alpha_star
    charged = inst.p_star > 0.0
    c_star = float(np.dot(inst.p_star[charged], C[charged]))
    if not math.isfinite(c_star):
        raise AssumptionFailure("ae_one", message="reference expectation of C is infinite")

    l_star = 0.0
    d = inst.dim
    for bits in range(2**d):
        theta = np.array([1.0 if bits >> i & 1 else -1.0 for i in range(d)])
        vals = _values_at(inst, 1.0, theta, charged)
        l_star += sum(
            w * max(v, 0.0) for w, v in zip(inst.p_star[charged], vals)
        )
    if not math.isfinite(l_star):
        raise AssumptionFailure("integ_v_plus", message="reference gain at unit wealth infinite")

    thr = 1.0 + 2.0 * c_star / alpha
    target = 1.0 - alpha / 2.0

    def mass_below(k: float) -> float:
        total = 0.0
        for j in np.nonzero(charged)[0]:
            if inst.sections[j](-float(k)) <= -thr:
                total += float(inst.p_star[j])
        return total

    k = 1.0
    while mass_below(k) < target:
        k *= 2.0
        if k > N0_CAP:
            raise AssumptionFailure(
                "pb_inequality",
                message="no cash threshold up to 2^40 makes the reference section "
                f"fall below -(1 + 2c*/alpha) = {-thr} with mass {target}",
            )
    lo, hi = max(1, int(k // 2)), int(k)
    while lo < hi:
        mid = (lo + hi) // 2
        if mass_below(mid) >= target:
            hi = mid
        else:
            lo = mid + 1
    n0 = max(1, hi)

    eta, glo, ghi = inst.eta, inst.gamma_lo, inst.gamma_hi

    def sup_neg(x: float) -> float:
        floor = -max(-float(x), 0.0)
        worst = 0.0
        for row in inst.extremes:
            total = 0.0
            for j in np.nonzero(row > 0.0)[0]:
                v = inst.sections[j](floor)
                total += float(row[j]) * (INF if v == -INF else max(-v, 0.0))
            worst = max(worst, total)
        return worst

    def K0(x: float) -> float:
        xp = max(float(x), 0.0)
        base = (xp + n0) / alpha
        return max(1.0, xp, base, _safe_pow(base, 1.0 / (1.0 - eta)))

    exp_gap = 1.0 / (eta * ghi - glo)

    def K1(x: float) -> float:
        return max(
            K0(x),
            _safe_pow(6.0 * l_star / alpha, exp_gap),
            _safe_pow(6.0 * c_star / alpha, exp_gap),
            _safe_pow(6.0 / alpha * sup_neg(x), 1.0 / (eta * ghi)),
        )

    Kbar = max(
        1.0,
        n0 / alpha,
        _safe_pow(n0 / alpha, 1.0 / (1.0 - eta)),
        _safe_pow(8.0 * c_star / alpha, exp_gap),
        _safe_pow(8.0 * l_star / alpha, exp_gap),
    )

    def N_of_m(m: float) -> float:
        inner = 4.0 / alpha * (m + (_safe_pow(Kbar, glo) + 1.0) * (l_star + c_star))
        return n0 * _safe_pow(inner, 1.0 / glo)

    return BoundPack(
        c_star=c_star, l_star=l_star, n0_star=n0, Kbar=Kbar,
        K0=K0, K1=K1, N_of_m=N_of_m, sup_neg=sup_neg,
        alpha_star=alpha, eta=eta, gamma_lo=glo, gamma_hi=ghi,
    )


# --------------------------------------------------------------------------
# maximization
# --------------------------------------------------------------------------

class MaximizeResult(NamedTuple):
    h: np.ndarray
    value: float
    boundary_flag: bool


def _golden_max(g: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Golden-section maximization of a (possibly kinked) concave function."""
    a, b = float(lo), float(hi)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(400):
        if b - a <= tol * max(1.0, abs(a), abs(b)):
            break
        if gc < gd:
            a, c, gc = c, d, gd
            d = a + GOLDEN * (b - a)
            gd = g(d)
        else:
            b, d, gd = d, c, gc
            c = b - GOLDEN * (b - a)
            gc = g(c)
    mid = 0.5 * (a + b)
    return mid, g(mid)


def _expand_bracket(g: Callable[[float], float], radius: float) -> tuple[float, float]:
    """Grow [lo, hi] around 0 until the concave g turns down or hits radius."""
    hi = min(1.0, radius)
    g_hi = g(hi)
    while hi < radius:
        nxt = min(4.0 * hi, radius)
        g_nxt = g(nxt)
        if not g_nxt > g_hi:
            break
        hi, g_hi = nxt, g_nxt
    lo = -min(1.0, radius)
    g_lo = g(lo)
    while lo > -radius:
        nxt = max(4.0 * lo, -radius)
        g_nxt = g(nxt)
        if not g_nxt > g_lo:
            break
        lo, g_lo = nxt, g_nxt
    # one expansion step of slack so the turning point is interior
    hi = min(4.0 * hi, radius)
    lo = max(4.0 * lo, -radius)
    return lo, hi


def _nelder_mead_max(f, x0: np.ndarray, step: float, iters: int = 250) -> np.ndarray:
    """Tiny simplex search (maximization) for the low-dimensional hull case."""
    k = x0.size
    pts = [x0.astype(float)]
    for i in range(k):
        e = x0.copy()
        e[i] += step
        pts.append(e)
    vals = [f(p) for p in pts]
    for _ in range(iters):
        order = np.argsort(vals)[::-1]  # best first
        pts = [pts[i] for i in order]
        vals = [vals[i] for i in order]
        if abs(vals[0] - vals[-1]) <= 1e-12 * (1.0 + abs(vals[0])):
            break
        centroid = np.mean(pts[:-1], axis=0)
        worst = pts[-1]
        refl = centroid + (centroid - worst)
        f_refl = f(refl)
        if f_refl > vals[0]:
            exp = centroid + 2.0 * (centroid - worst)
            f_exp = f(exp)
            if f_exp > f_refl:
                pts[-1], vals[-1] = exp, f_exp
            else:
                pts[-1], vals[-1] = refl, f_refl
        elif f_refl > vals[-2]:
            pts[-1], vals[-1] = refl, f_refl
        else:
            contr = centroid - 0.5 * (centroid - worst)
            f_contr = f(contr)
            if f_contr > vals[-1]:
                pts[-1], vals[-1] = contr, f_contr
            else:
                for i in range(1, len(pts)):
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
                    vals[i] = f(pts[i])
    best = int(np.argmax(vals))
    return pts[best]


def maximize(
    inst: OnePeriodInstance,
    x: float,
    bounds: BoundPack,
    tol: float = 1e-9,
) -> MaximizeResult:
    """Maximize psi(x, .) over the support's affine hull within radius K1(x).

    Dimension 0 returns the zero strategy.  Dimension 1 expands a bracket
    geometrically (valid for a concave objective) and refines by golden
    section to a width relative to the located maximizer, never wider than
    the certified radius.  Dimension >= 2 runs simplex searches from the
    origin and axis starts, then refines each coordinate by golden section.
    The boundary flag marks the theoretically impossible event that the
    maximizer is glued to the radius while beating psi(x, 0): that indicates
    an assumption violation or a margin underestimate upstream.
    """
    k = inst.frame.dim
    d = inst.dim
    if k == 0:
        h0 = np.zeros(d)
        return MaximizeResult(h=h0, value=psi_robust(inst, x, h0), boundary_flag=False)
    K1x = bounds.K1(x)
    radius = K1x if math.isfinite(K1x) else _BRACKET_CAP
    radius = min(radius, _BRACKET_CAP)

    if k == 1:
        u = inst.frame.basis[0]

        def g(s: float) -> float:
            return psi_robust(inst, x, s * u)

        lo, hi = _expand_bracket(g, radius)
        s_star, value = _golden_max(g, lo, hi, tol)
        h = s_star * u
        norm = abs(s_star)
    else:
        def f(coords: np.ndarray) -> float:
            if np.linalg.norm(coords) > radius:
                return -INF
            return psi_robust(inst, x, inst.frame.basis.T @ coords)

        start_r = min(radius / 2.0, 1e4)
        starts = [np.zeros(k)]
        for i in range(k):
            e = np.zeros(k)
            e[i] = start_r
            starts.append(e)
            starts.append(-e)
        best_c, best_v = None, -INF
        for s0 in starts:
            c = _nelder_mead_max(f, s0, step=max(1.0, start_r / 4.0))
            v = f(c)
            if v > best_v:
                best_c, best_v = c, v
        coords = best_c.copy()
        for i in range(k):
            def gi(s: float, i=i) -> float:
                c = coords.copy()
                c[i] = s
                return f(c)

            span = max(1.0, abs(coords[i]))
            lo = max(coords[i] - 4.0 * span, -radius)
            hi = min(coords[i] + 4.0 * span, radius)
            coords[i], _ = _golden_max(gi, lo, hi, tol)
        value = f(coords)
        h = inst.frame.basis.T @ coords
        norm = float(np.linalg.norm(coords))

    flag = bool(
        math.isfinite(K1x)
        and norm >= K1x * (1.0 - 1e-6)
        and value > psi_robust(inst, x, np.zeros(d)) + tol
    )
    return MaximizeResult(h=np.asarray(h, dtype=float).reshape(d), value=value,
                          boundary_flag=flag)


class NmCheck(NamedTuple):
    status: str  # 'ok' | 'violated' | 'untested'
    n_m: float
    value: float | None


def verify_nm(inst: OnePeriodInstance, bounds: BoundPack, m: int, tol: float = 1e-7) -> NmCheck:
    """Check that the value at wealth -ceil(N_m) sits at or below -m."""
    if m < 1:
        raise ParameterError("m must be a positive integer")
    n_m = bounds.N_of_m(float(m))
    if not math.isfinite(n_m) or n_m > 1e300:
        return NmCheck(status="untested", n_m=n_m, value=None)
    n_m = math.ceil(n_m)
    value = maximize(inst, -float(n_m), bounds).value
    status = "ok" if value <= -float(m) + tol else "violated"
    return NmCheck(status=status, n_m=float(n_m), value=value)
