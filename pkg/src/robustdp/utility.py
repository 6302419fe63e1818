"""Random utility evaluators and the asymptotic-elasticity toolkit.

A scalar utility is a named builtin with parameters; a random utility
attaches scalar sections to tree leaves in one of three ways: one shared
section (``deterministic``), a shared section shifted by a per-leaf
reference point (``benchmark``), or an explicit per-leaf table.  Sections
are nondecreasing, concave and upper-semicontinuous in wealth; ``-inf`` is a
legal value below a floor, ``+inf`` never is.

The elasticity side of the module estimates the tail ratio x U'(x) / U(x),
constructs growth certificates ``U(lambda x) <= lambda^gamma (U(x) + C)``
from it, searches the anchor wealth below which the utility is 'negative
enough', and runs the moment-controlled certification that makes the glued
multi-period strategy provably admissible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import mpmath
import numpy as np

from .errors import (
    AssumptionFailure,
    CertificationFailure,
    DomainError,
    ParameterError,
    RAEViolation,
    SearchExhausted,
    UnknownLeaf,
)
from .extmath import INF
from .market import (
    AmbiguitySet,
    ScenarioTree,
    count_extreme_products,
    enumerate_extreme_products,
    leaf_distribution,
)

MOMENT_ORDERS = (1, 2, 4, 8)
_PRODUCT_ENUM_CAP = 4096
_PRODUCT_SAMPLES = 64


class _SafeMath:
    """float backend whose exp saturates at inf instead of raising."""

    @staticmethod
    def exp(t):
        try:
            return math.exp(t)
        except OverflowError:
            return INF


_safe_math = _SafeMath()


# --------------------------------------------------------------------------
# scalar utility specs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarUtilitySpec:
    name: str
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return scalar_eval(self, x)


def linear_power(a: float, offset: float = 0.0) -> ScalarUtilitySpec:
    """a*x on the losses, (1+x)^a - 1 on the gains; concave iff 0 < a < 1."""
    if not 0.0 < a < 1.0:
        raise ParameterError(f"linear_power exponent must be in (0, 1), got {a!r}")
    return ScalarUtilitySpec("linear_power", {"a": float(a), "offset": float(offset)})


def exp_cara(offset: float = 0.0) -> ScalarUtilitySpec:
    """1 - exp(-x), optionally shifted by an additive constant."""
    return ScalarUtilitySpec("exp_cara", {"offset": float(offset)})


def linear(offset: float = 0.0) -> ScalarUtilitySpec:
    return ScalarUtilitySpec("linear", {"offset": float(offset)})


def piecewise_linear(
    knots,
    slopes,
    value0: float = 0.0,
    floor: float | None = None,
    validate: bool = True,
) -> ScalarUtilitySpec:
    """Concave nondecreasing piecewise-linear section.

    ``slopes`` has one more entry than ``knots``: slopes[i] applies left of
    knots[i], slopes[-1] beyond the last knot; ``value0`` anchors the value at
    the first knot.  ``floor`` (optional) sends everything below it to -inf.
    ``validate=False`` skips the shape checks, which some diagnostics use to
    build deliberately broken sections.
    """
    knots = [float(k) for k in knots]
    slopes = [float(s) for s in slopes]
    if len(slopes) != len(knots) + 1 or not knots:
        raise ParameterError("need len(slopes) == len(knots) + 1 and at least one knot")
    if validate:
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ParameterError("knots must be strictly increasing")
        if any(s < 0.0 for s in slopes):
            raise ParameterError("slopes must be nonnegative (monotonicity)")
        if any(b > a + 1e-12 for a, b in zip(slopes, slopes[1:])):
            raise ParameterError("slopes must be nonincreasing (concavity)")
        if floor is not None and floor > knots[0]:
            raise ParameterError("floor must sit at or below the first knot")
    return ScalarUtilitySpec(
        "piecewise_linear",
        {"knots": tuple(knots), "slopes": tuple(slopes), "value0": float(value0),
         "floor": None if floor is None else float(floor)},
    )


def _pw_value(params, x, xp):
    if params["floor"] is not None and x < params["floor"]:
        return -INF
    knots, slopes = params["knots"], params["slopes"]
    v = params["value0"]
    if x <= knots[0]:
        return v + slopes[0] * (x - knots[0])
    for i in range(1, len(knots)):
        if x <= knots[i]:
            return v + slopes[i] * (x - knots[i - 1])
        v = v + slopes[i] * (knots[i] - knots[i - 1])
    return v + slopes[-1] * (x - knots[-1])


def _pw_slope(params, x):
    knots, slopes = params["knots"], params["slopes"]
    if x < knots[0] or (x == knots[0] and x < 0.0):
        return slopes[0]
    for i in range(1, len(knots)):
        if x < knots[i] or (x == knots[i] and x < 0.0):
            return slopes[i]
    return slopes[-1]


def scalar_eval(spec: ScalarUtilitySpec, x, xp=_safe_math):
    """Evaluate a builtin at ``x``; pass ``xp=mpmath`` for huge arguments."""
    p = spec.params
    off = p.get("offset", 0.0)
    if spec.name == "linear_power":
        a = p["a"]
        if x <= 0.0:
            return a * x + off
        return (1.0 + x) ** a - 1.0 + off
    if spec.name == "exp_cara":
        return 1.0 - xp.exp(-x) + off
    if spec.name == "linear":
        return x + off
    if spec.name == "piecewise_linear":
        return _pw_value(p, x, xp)
    raise ParameterError(f"unknown scalar utility {spec.name!r}")


def scalar_deriv(spec: ScalarUtilitySpec, x, xp=_safe_math):
    """One-sided derivative: right for x >= 0, left for x < 0 at kinks."""
    p = spec.params
    if spec.name == "linear_power":
        a = p["a"]
        if x <= 0.0:
            return a
        return a * (1.0 + x) ** (a - 1.0)
    if spec.name == "exp_cara":
        return xp.exp(-x)
    if spec.name == "linear":
        return 1.0
    if spec.name == "piecewise_linear":
        return _pw_slope(p, x)
    raise ParameterError(f"unknown scalar utility {spec.name!r}")


def scalar_eval_np(spec: ScalarUtilitySpec, w: np.ndarray) -> np.ndarray:
    """Vectorized scalar_eval over a float array (overflow saturates to inf)."""
    w = np.asarray(w, dtype=float)
    p = spec.params
    off = p.get("offset", 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.name == "linear_power":
            a = p["a"]
            out = np.where(w <= 0.0, a * w, (1.0 + np.maximum(w, 0.0)) ** a - 1.0) + off
        elif spec.name == "exp_cara":
            out = 1.0 - np.exp(-w) + off
        elif spec.name == "linear":
            out = w + off
        elif spec.name == "piecewise_linear":
            knots = np.asarray(p["knots"])
            slopes = np.asarray(p["slopes"])
            kvals = np.empty(knots.size)
            kvals[0] = p["value0"]
            for i in range(1, knots.size):
                kvals[i] = kvals[i - 1] + slopes[i] * (knots[i] - knots[i - 1])
            idx = np.searchsorted(knots, w, side="right")
            anchor = np.clip(idx - 1, 0, knots.size - 1)
            out = kvals[anchor] + slopes[idx] * (w - knots[anchor])
            if p["floor"] is not None:
                out = np.where(w < p["floor"], -INF, out)
        else:
            raise ParameterError(f"unknown scalar utility {spec.name!r}")
    return out


def spec_to_json(spec: ScalarUtilitySpec) -> dict:
    params = dict(spec.params)
    if spec.name == "piecewise_linear":
        params["knots"] = list(params["knots"])
        params["slopes"] = list(params["slopes"])
    return {"name": spec.name, "params": params}


def spec_from_json(doc: dict) -> ScalarUtilitySpec:
    name, params = doc.get("name"), dict(doc.get("params", {}))
    if name == "linear_power":
        return linear_power(params["a"], params.get("offset", 0.0))
    if name == "exp_cara":
        return exp_cara(params.get("offset", 0.0))
    if name == "linear":
        return linear(params.get("offset", 0.0))
    if name == "piecewise_linear":
        return piecewise_linear(
            params["knots"], params["slopes"], params.get("value0", 0.0),
            params.get("floor"),
        )
    raise ParameterError(f"unknown scalar utility {name!r}")


# --------------------------------------------------------------------------
# random utilities
# --------------------------------------------------------------------------

_SHAPE_SAMPLES = (-37.0, -11.0, -2.5, -1.0, 0.0, 0.5, 1.0, 4.0, 19.0, 256.0)


class RandomUtility:
    """Leaf-indexed utility; wealth sections nondecreasing/concave/usc."""

    def __init__(
        self,
        kind: str,
        base: ScalarUtilitySpec | None = None,
        Z: dict[str, float] | None = None,
        table: dict[str, ScalarUtilitySpec] | None = None,
    ):
        if kind not in ("deterministic", "benchmark", "table"):
            raise ParameterError(f"unknown utility kind {kind!r}")
        if kind in ("deterministic", "benchmark") and base is None:
            raise ParameterError(f"{kind} utility needs a base spec")
        if kind == "benchmark" and not Z:
            raise ParameterError("benchmark utility needs a reference-point table Z")
        if kind == "table" and not table:
            raise ParameterError("table utility needs a per-leaf table")
        self.kind = kind
        self.base = base
        self.Z = dict(Z) if Z else None
        self.table = dict(table) if table else None
        self._validate_shape()

    def leaf_domain(self) -> set[str] | None:
        if self.kind == "benchmark":
            return set(self.Z)
        if self.kind == "table":
            return set(self.table)
        return None

    def spec_at(self, leaf: str) -> tuple[ScalarUtilitySpec, float]:
        """(scalar section, wealth shift) so eval(leaf, x) = section(x - shift)."""
        if self.kind == "deterministic":
            return self.base, 0.0
        if self.kind == "benchmark":
            try:
                return self.base, self.Z[leaf]
            except KeyError:
                raise UnknownLeaf(f"leaf {leaf!r} outside the reference table") from None
        try:
            return self.table[leaf], 0.0
        except KeyError:
            raise UnknownLeaf(f"leaf {leaf!r} outside the utility table") from None

    def eval(self, leaf: str, x: float) -> float:
        spec, shift = self.spec_at(leaf)
        return float(scalar_eval(spec, x - shift))

    def section(self, leaf: str) -> Callable[[float], float]:
        spec, shift = self.spec_at(leaf)
        if shift == 0.0:
            return lambda x: float(scalar_eval(spec, x))
        return lambda x: float(scalar_eval(spec, x - shift))

    def section_np(self, leaf: str) -> Callable[[np.ndarray], np.ndarray]:
        spec, shift = self.spec_at(leaf)
        if shift == 0.0:
            return lambda w: scalar_eval_np(spec, w)
        return lambda w: scalar_eval_np(spec, w - shift)

    def _validate_shape(self) -> None:
        specs = [self.base] if self.kind != "table" else list(self.table.values())
        for spec in specs:
            vals = [scalar_eval(spec, x) for x in _SHAPE_SAMPLES]
            if any(v == INF for v in vals):
                raise ParameterError("+inf at finite wealth is not a legal section value")
            for (x1, v1), (x2, v2), (x3, v3) in zip(
                zip(_SHAPE_SAMPLES, vals), zip(_SHAPE_SAMPLES[1:], vals[1:]),
                zip(_SHAPE_SAMPLES[2:], vals[2:]),
            ):
                if v2 < v1 - 1e-10 or v3 < v2 - 1e-10:
                    raise ParameterError(f"section {spec.name} not nondecreasing near {x2}")
                if -INF in (v1, v3):
                    continue
                t = (x2 - x1) / (x3 - x1)
                chord = (1 - t) * v1 + t * v3
                if v2 < chord - 1e-10 * max(1.0, abs(chord)):
                    raise ParameterError(f"section {spec.name} not concave near {x2}")


def utility_to_json(u: RandomUtility) -> dict:
    doc: dict = {"kind": u.kind}
    if u.base is not None:
        doc["base"] = spec_to_json(u.base)
    if u.Z is not None:
        doc["Z"] = dict(u.Z)
    if u.table is not None:
        doc["table"] = {leaf: spec_to_json(s) for leaf, s in u.table.items()}
    return doc


def utility_from_json(doc: dict) -> RandomUtility:
    kind = doc.get("kind")
    base = spec_from_json(doc["base"]) if "base" in doc else None
    table = None
    if "table" in doc:
        table = {leaf: spec_from_json(s) for leaf, s in doc["table"].items()}
    return RandomUtility(kind, base=base, Z=doc.get("Z"), table=table)


# --------------------------------------------------------------------------
# asymptotic elasticity
# --------------------------------------------------------------------------

class AEEstimate(NamedTuple):
    value: float
    converged: bool


_AE_JS = range(10, 61)
_DIVERGENCE = 1e12


def _normalize_side(side) -> int:
    if side in (INF, "+inf", "plus", "plus_infinity", "+"):
        return 1
    if side in (-INF, "-inf", "minus", "minus_infinity", "-"):
        return -1
    raise ParameterError(f"side must designate +inf or -inf, got {side!r}")


def _ratio(spec: ScalarUtilitySpec, x: mpmath.mpf) -> float | None:
    u = scalar_eval(spec, x, xp=mpmath)
    if u == -INF:
        return None
    if u == 0:
        return None
    du = scalar_deriv(spec, x, xp=mpmath)
    r = x * du / u
    if r > 1e300:
        return INF
    if r < -1e300:
        return -INF
    return float(r)


def asymptotic_elasticity(spec: ScalarUtilitySpec, side) -> AEEstimate:
    """Numeric tail limit of x U'(x) / U(x) along the geometric grid 2^10..2^60.

    Converged means the last five grid ratios agree within 1e-6; a sequence
    climbing monotonically past 1e12 in absolute value is reported as the
    corresponding infinity.  DomainError when the section vanishes on the
    whole tail.
    """
    sign = _normalize_side(side)
    with mpmath.workdps(40):
        ratios = [r for j in _AE_JS if (r := _ratio(spec, mpmath.mpf(sign) * 2**j)) is not None]
    if not ratios:
        raise DomainError("utility is 0 on the entire scan tail; elasticity undefined")
    tail = ratios[-5:]
    if len(tail) == 5 and all(math.isfinite(r) for r in tail) and max(tail) - min(tail) <= 1e-6:
        return AEEstimate(value=tail[-1], converged=True)
    absr = [abs(r) for r in ratios]
    monotone = all(b >= a - 1e-12 for a, b in zip(absr[-8:], absr[-8:][1:]))
    if monotone and absr[-1] > _DIVERGENCE:
        return AEEstimate(value=math.copysign(INF, ratios[-1]), converged=True)
    return AEEstimate(value=ratios[-1], converged=False)


# --------------------------------------------------------------------------
# growth certificates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarCertificate:
    gamma: float
    C: float
    side: str  # 'plus_infinity' | 'minus_infinity'
    anchors: dict


def _upos(v: float) -> float:
    return max(v, 0.0)


def _uneg(v: float) -> float:
    return max(-v, 0.0) if v != -INF else INF


def _scan_tail(spec, gamma, sign, anchor_mag) -> bool:
    """ratio beyond the anchor stays on the right side of gamma (200 samples)."""
    with mpmath.workdps(40):
        mags = np.geomspace(anchor_mag, 2.0**60, 200)
        for mag in mags:
            r = _ratio(spec, mpmath.mpf(sign) * mpmath.mpf(float(mag)))
            if r is None:
                return False
            if sign < 0 and not r > gamma:
                return False
            if sign > 0 and not r < gamma:
                return False
    return True


def construct_gamma_C(spec: ScalarUtilitySpec, gamma: float) -> ScalarCertificate:
    """Constructive growth certificate from the elasticity tail.

    gamma > 1 works against the left tail: find an anchor ``x_low < 0`` with
    ``U(x_low) < 0`` and ratio above gamma beyond it, then
    ``C = U+(0) + U-(0) + U-(x_low)``.  gamma < 1 works against the right
    tail: anchors ``x_bar > 0`` (ratio below gamma beyond it, positive value)
    and ``x_prime < 0`` with negative value, then
    ``C = U+(x_bar) + U-(x_prime) + U-(0)``.  The certificate is swept on a
    10^4-point (lambda, x) grid before being returned.
    """
    if gamma <= 0.0 or gamma == 1.0:
        raise ParameterError(f"gamma must be positive and != 1, got {gamma!r}")
    if gamma > 1.0:
        ae = asymptotic_elasticity(spec, -INF)
        if not ae.value > gamma:
            raise RAEViolation(
                f"left-tail elasticity {ae.value} does not exceed gamma {gamma}"
            )
        x_low = None
        for j in range(0, 61):
            cand = -(2.0**j)
            if scalar_eval(spec, cand) < 0.0 and _scan_tail(spec, gamma, -1, 2.0**j):
                x_low = cand
                break
        if x_low is None:
            raise SearchExhausted("no left anchor below -2^60 for the growth certificate")
        C = _upos(scalar_eval(spec, 0.0)) + _uneg(scalar_eval(spec, 0.0)) + _uneg(
            scalar_eval(spec, x_low)
        )
        cert = ScalarCertificate(gamma=gamma, C=C, side="minus_infinity",
                                 anchors={"x_low": x_low})
    else:
        ae = asymptotic_elasticity(spec, INF)
        if not ae.value < gamma or not scalar_eval(spec, 2.0**60) > 0.0:
            raise RAEViolation(
                f"right-tail elasticity {ae.value} does not undershoot gamma {gamma} "
                "with an eventually positive utility"
            )
        x_bar = None
        for j in range(0, 61):
            cand = 2.0**j
            if scalar_eval(spec, cand) > 0.0 and _scan_tail(spec, gamma, 1, 2.0**j):
                x_bar = cand
                break
        if x_bar is None:
            raise SearchExhausted("no right anchor below 2^60 for the growth certificate")
        x_prime = None
        for j in range(0, 61):
            cand = -(2.0**j)
            if scalar_eval(spec, cand) < 0.0:
                x_prime = cand
                break
        if x_prime is None:
            raise SearchExhausted("no negative-value anchor; utility never goes below 0")
        C = _upos(scalar_eval(spec, x_bar)) + _uneg(scalar_eval(spec, x_prime)) + _uneg(
            scalar_eval(spec, 0.0)
        )
        cert = ScalarCertificate(gamma=gamma, C=C, side="plus_infinity",
                                 anchors={"x_bar": x_bar, "x_prime": x_prime})
    _sweep_scalar_certificate(spec, cert)
    return cert


def _sweep_scalar_certificate(spec, cert, lambdas=None, xs=None) -> None:
    lambdas = np.geomspace(1.0, 1e4, 100).tolist() if lambdas is None else lambdas
    xs = np.linspace(-1e3, 1e3, 100).tolist() if xs is None else xs
    for lam in lambdas:
        for x in xs:
            ux = scalar_eval(spec, x)
            if ux == -INF:
                continue  # rhs is -inf and U(lam x) <= U(x) by monotonicity
            lhs = scalar_eval(spec, lam * x)
            rhs = lam**cert.gamma * (ux + cert.C)
            if lhs > rhs + 1e-9 * (1.0 + abs(ux)):
                raise CertificationFailure(
                    clause="ae_sweep", witness=(None, float(x), float(lam))
                )


def gamma1_bound_check(spec: ScalarUtilitySpec) -> bool:
    """Sub-linear growth U(lambda x) <= lambda (U(x) + U-(0)) on a 10^4 sweep."""
    un0 = _uneg(scalar_eval(spec, 0.0))
    if un0 == INF:
        raise ParameterError("U-(0) must be finite for the sub-linearity check")
    for lam in np.geomspace(1.0, 1e4, 100).tolist():
        for x in np.linspace(-1e3, 1e3, 100).tolist():
            lhs = scalar_eval(spec, lam * x)
            ux = scalar_eval(spec, x)
            if ux == -INF:
                continue
            rhs = lam * (ux + un0)
            if lhs > rhs + 1e-9 * (1.0 + abs(rhs)):
                return False
    return True


# --------------------------------------------------------------------------
# certificates for random utilities
# --------------------------------------------------------------------------

@dataclass
class AECertificate:
    """Growth certificate with a per-leaf constant.

    ``C_of_leaf`` may be None for a deterministic utility, in which case
    ``C_default`` applies to every leaf.  ``anchors`` records the search
    output that produced the constants (shape depends on the side and kind).
    """

    gamma: float
    side: str
    C_default: float | None = None
    C_of_leaf: dict[str, float] | None = None
    anchors: dict = field(default_factory=dict)

    def C(self, leaf: str) -> float:
        if self.C_of_leaf is not None and leaf in self.C_of_leaf:
            return self.C_of_leaf[leaf]
        if self.C_default is None:
            raise UnknownLeaf(f"no growth constant for leaf {leaf!r}")
        return self.C_default

    def max_C(self) -> float:
        vals = list(self.C_of_leaf.values()) if self.C_of_leaf else []
        if self.C_default is not None:
            vals.append(self.C_default)
        return max(vals)


def _default_gamma(ae_minus: float, ae_plus: float, lim_pos: bool) -> float:
    if ae_minus > 1.0 + 1e-6:
        return min(2.0, (1.0 + ae_minus) / 2.0)
    if ae_plus < 1.0 - 1e-6 and lim_pos:
        return (1.0 + ae_plus) / 2.0
    raise RAEViolation(
        f"elasticities ({ae_minus} at -inf, {ae_plus} at +inf) admit no gamma != 1"
    )


def certificate_for(
    u: RandomUtility,
    leaves: Iterable[str] | None = None,
    gamma_hint: float | None = None,
) -> AECertificate:
    """Growth certificate for a random utility, one shared gamma, per-leaf C."""
    if u.kind == "deterministic":
        gamma = gamma_hint
        if gamma is None:
            ae_m = asymptotic_elasticity(u.base, -INF).value
            ae_p = asymptotic_elasticity(u.base, INF).value
            gamma = _default_gamma(ae_m, ae_p, scalar_eval(u.base, 2.0**60) > 0.0)
        sc = construct_gamma_C(u.base, gamma)
        return AECertificate(gamma=sc.gamma, side=sc.side, C_default=sc.C,
                             anchors=dict(sc.anchors))
    if u.kind == "table":
        specs = u.table
        if gamma_hint is None:
            ae_m = min(asymptotic_elasticity(s, -INF).value for s in specs.values())
            ae_p = max(asymptotic_elasticity(s, INF).value for s in specs.values())
            lim_pos = all(scalar_eval(s, 2.0**60) > 0.0 for s in specs.values())
            gamma = _default_gamma(ae_m, ae_p, lim_pos)
        else:
            gamma = gamma_hint
        Cs, anchors = {}, {}
        side = None
        for leaf, spec in specs.items():
            sc = construct_gamma_C(spec, gamma)
            Cs[leaf] = sc.C
            anchors[leaf] = dict(sc.anchors)
            side = sc.side
        return AECertificate(gamma=gamma, side=side, C_of_leaf=Cs, anchors=anchors)
    return _benchmark_certificate(u, gamma_hint)


def _benchmark_certificate(u: RandomUtility, gamma_hint: float | None) -> AECertificate:
    """Shifted-anchor construction for sections of the form base(x - Z(leaf)).

    The intermediate exponent ``gamma_tilde`` certifies the base section; the
    target gamma then holds for every shifted section with anchors moved by
    the leaf's reference point and scaled through eta = gamma / gamma_tilde
    (left tail) or its reciprocal reading (right tail).
    """
    base, Z = u.base, u.Z
    ae_m = asymptotic_elasticity(base, -INF).value
    ae_p = asymptotic_elasticity(base, INF).value
    if ae_m > 1.0 + 1e-6:
        gamma = gamma_hint if gamma_hint is not None else min(2.0, (1.0 + ae_m) / 2.0)
        if not 1.0 < gamma < ae_m:
            raise RAEViolation(f"gamma {gamma} outside (1, {ae_m})")
        upper = min(ae_m, gamma + max(1.0, gamma))
        gamma_t = (gamma + upper) / 2.0
        eta = gamma / gamma_t
        sc = construct_gamma_C(base, gamma_t)
        x_low = sc.anchors["x_low"]
        Cs, anchors = {}, {}
        for leaf, z in Z.items():
            xl = min(x_low, x_low + z, -eta / (1.0 - eta) * z)
            Cs[leaf] = (
                _upos(float(scalar_eval(base, 0.0 - z)))
                + _uneg(float(scalar_eval(base, 0.0 - z)))
                + _uneg(float(scalar_eval(base, xl - z)))
            )
            anchors[leaf] = {"x_low": xl}
        cert = AECertificate(gamma=gamma, side="minus_infinity", C_of_leaf=Cs,
                             anchors=anchors)
    elif ae_p < 1.0 - 1e-6 and scalar_eval(base, 2.0**60) > 0.0:
        gamma = gamma_hint if gamma_hint is not None else (1.0 + ae_p) / 2.0
        if not ae_p < gamma < 1.0:
            raise RAEViolation(f"gamma {gamma} outside ({ae_p}, 1)")
        gamma_t = (ae_p + gamma) / 2.0
        if gamma_t <= 0.0:
            gamma_t = gamma / 2.0
        eta = gamma / gamma_t  # > 1
        sc = construct_gamma_C(base, gamma_t)
        x_bar, x_prime = sc.anchors["x_bar"], sc.anchors["x_prime"]
        Cs, anchors = {}, {}
        for leaf, z in Z.items():
            xb = max(x_bar, x_bar + z, -eta / (1.0 - eta) * z)
            xp_ = min(x_prime, x_prime + z)
            Cs[leaf] = (
                _upos(float(scalar_eval(base, xb - z)))
                + _uneg(float(scalar_eval(base, xp_ - z)))
                + _uneg(float(scalar_eval(base, 0.0 - z)))
            )
            anchors[leaf] = {"x_bar": xb, "x_prime": xp_}
        cert = AECertificate(gamma=gamma, side="plus_infinity", C_of_leaf=Cs,
                             anchors=anchors)
    else:
        raise RAEViolation(
            f"base elasticities ({ae_m} at -inf, {ae_p} at +inf) admit no gamma != 1"
        )
    sweep_certificate(u, cert)
    return cert


def sweep_certificate(
    u: RandomUtility,
    cert: AECertificate,
    leaves: Iterable[str] | None = None,
    n: int = 100,
) -> None:
    """Assert U(leaf, lambda x) <= lambda^gamma (U(leaf, x) + C(leaf)) samplewise."""
    if leaves is None:
        dom = u.leaf_domain()
        leaves = sorted(dom) if dom is not None else ["*"]
    lambdas = np.geomspace(1.0, 1e4, n).tolist()
    xs = np.linspace(-1e3, 1e3, n).tolist()
    for leaf in leaves:
        spec, shift = u.spec_at(leaf) if leaf != "*" else (u.base, 0.0)
        C = cert.C(leaf) if leaf != "*" else cert.max_C()
        for lam in lambdas:
            for x in xs:
                ux = scalar_eval(spec, x - shift)
                if ux == -INF:
                    continue
                lhs = scalar_eval(spec, lam * x - shift)
                rhs = lam**cert.gamma * (ux + C)
                if lhs > rhs + 1e-9 * (1.0 + abs(ux)):
                    raise CertificationFailure(
                        clause="ae_sweep", witness=(leaf, float(x), float(lam))
                    )


# --------------------------------------------------------------------------
# anchor wealth: 'negative enough' threshold per leaf
# --------------------------------------------------------------------------

def assumption5_lowerbar(
    u: RandomUtility,
    cert: AECertificate,
    leaves: Iterable[str] | None = None,
    gap: float = 1.0,
) -> dict[str, float]:
    """Per leaf, the smallest-magnitude x < 0 with U(leaf, x) + C(leaf) <= -gap.

    Doubling finds a satisfying wealth, bisection shrinks its magnitude; a
    leaf whose section never goes below -C(leaf) - gap by -2^60 raises
    AssumptionFailure (the utility is not 'negative enough' there, so the
    one-period cash-threshold assumption will fail too).
    """
    if leaves is None:
        dom = u.leaf_domain()
        leaves = sorted(dom) if dom is not None else ["*"]
    out: dict[str, float] = {}
    for leaf in leaves:
        spec, shift = u.spec_at(leaf) if leaf != "*" else (u.base, 0.0)
        C = cert.C(leaf) if leaf != "*" else cert.max_C()

        def g(x: float) -> float:
            v = scalar_eval(spec, x - shift)
            return -INF if v == -INF else v + C

        lo = None
        for j in range(0, 61):
            if g(-(2.0**j)) <= -gap:
                lo = -(2.0**j)
                break
        if lo is None:
            raise AssumptionFailure(
                "lower_bar", node=leaf,
                message=f"section at leaf {leaf!r} never reaches -C-{gap} down to -2^60",
            )
        hi = 0.0 if lo == -1.0 else lo / 2.0
        if g(hi) <= -gap:
            out[leaf] = hi if hi < 0.0 else -1e-12
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) <= -gap:
                lo = mid
            else:
                hi = mid
            if abs(hi - lo) <= 1e-10 * max(1.0, abs(lo)):
                break
        out[leaf] = lo
    return out


# --------------------------------------------------------------------------
# moment-controlled certification
# --------------------------------------------------------------------------

@dataclass
class TypeAReport:
    clauses: dict
    sampled_orders: tuple = MOMENT_ORDERS

    @property
    def overall(self) -> bool:
        return all(cl.get("verdict", False) for cl in self.clauses.values())

    def to_json_dict(self) -> dict:
        return {"overall": self.overall, "orders": list(self.sampled_orders),
                "clauses": self.clauses}


def sup_moments(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    leaf_values: dict[str, float],
    orders: Iterable[int] = MOMENT_ORDERS,
    seed: int = 0,
) -> dict[int, float]:
    """sup over extreme product priors of E |X|^r at the sampled orders.

    Enumerates all products when there are at most 4096, otherwise draws 64
    seeded random extreme assignments.
    """
    orders = tuple(orders)
    total = count_extreme_products(tree, ambiguity)
    sups = {r: 0.0 for r in orders}
    if total <= _PRODUCT_ENUM_CAP:
        specs = enumerate_extreme_products(tree, ambiguity)
    else:
        rng = np.random.default_rng(seed)
        from .market import ProductPriorSpec

        def _sampled():
            node_ids = tree.non_terminal()
            for _ in range(_PRODUCT_SAMPLES):
                mixing = {}
                for nid in node_ids:
                    m = len(ambiguity[nid].extremes)
                    w = np.zeros(m)
                    w[rng.integers(m)] = 1.0
                    mixing[nid] = w
                yield ProductPriorSpec(mixing=mixing)

        specs = _sampled()
    for spec in specs:
        dist = leaf_distribution(tree, ambiguity, spec)
        for r in orders:
            val = sum(p * abs(leaf_values[leaf]) ** r for leaf, p in dist.items() if p > 0.0)
            sups[r] = max(sups[r], val)
    return sups


def certify_type_A(
    u: RandomUtility,
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    gamma_hint: float | None = None,
) -> TypeAReport:
    """Run the four moment-controlled clauses; raise on the first failure.

    Clauses: finiteness of the gain at unit wealth, existence of a growth
    certificate with finite per-leaf constant, the 'negative enough' anchor
    with a unit gap, and a polynomial floor -C1 (1 + |x|^p).  The raised
    CertificationFailure names the clause and carries the partial report.
    """
    leaves = tree.leaves()
    dom = u.leaf_domain()
    if dom is not None and not set(leaves) <= dom:
        raise UnknownLeaf(f"tree leaves {set(leaves) - dom} missing from utility domain")
    clauses: dict = {}
    report = TypeAReport(clauses=clauses)

    upos1 = {leaf: _upos(u.eval(leaf, 1.0)) for leaf in leaves}
    clauses["gain_moments"] = {
        "verdict": True,
        "sup_moments": {str(r): v for r, v in sup_moments(tree, ambiguity, upos1).items()},
    }

    try:
        cert = certificate_for(u, leaves, gamma_hint=gamma_hint)
    except RAEViolation as exc:
        clauses["ae_certificate"] = {"verdict": False, "reason": str(exc)}
        raise CertificationFailure("ae_certificate", report=report) from exc
    Cmap = {leaf: cert.C(leaf) for leaf in leaves}
    if any(not math.isfinite(c) for c in Cmap.values()):
        bad = next(l for l, c in Cmap.items() if not math.isfinite(c))
        clauses["ae_certificate"] = {"verdict": False, "reason": f"C infinite at {bad!r}"}
        raise CertificationFailure("ae_certificate", witness=(bad, None, None), report=report)
    clauses["ae_certificate"] = {
        "verdict": True,
        "gamma": cert.gamma,
        "side": cert.side,
        "sup_moments_C": {str(r): v for r, v in sup_moments(tree, ambiguity, Cmap).items()},
    }

    try:
        xbar = assumption5_lowerbar(u, cert, leaves)
    except AssumptionFailure as exc:
        clauses["lower_bar"] = {"verdict": False, "reason": str(exc)}
        raise CertificationFailure("lower_bar", witness=(exc.node, None, None),
                                   report=report) from exc
    gaps = {leaf: 1.0 / abs(u.eval(leaf, xbar[leaf]) + Cmap[leaf]) for leaf in leaves}
    clauses["lower_bar"] = {
        "verdict": True,
        "sup_moments_anchor": {
            str(r): v
            for r, v in sup_moments(tree, ambiguity, {l: abs(v) for l, v in xbar.items()}).items()
        },
        "sup_moments_reciprocal_gap": {
            str(r): v for r, v in sup_moments(tree, ambiguity, gaps).items()
        },
    }

    sweep = np.linspace(-1e3, 1e3, 401)
    fitted = None
    witness = None
    for p in (1.0, 2.0, 4.0):
        C1 = {}
        ok = True
        witness = None
        for leaf in leaves:
            ratios = []
            for x in sweep:
                v = u.eval(leaf, float(x))
                if v == -INF or not math.isfinite(v):
                    ok, witness = False, (leaf, float(x), None)
                    break
                ratios.append(max(-v, 0.0) / (1.0 + abs(x) ** p))
            if not ok:
                break
            C1[leaf] = max(ratios)
        if ok and all(math.isfinite(c) and c < 1e15 for c in C1.values()):
            fitted = (p, C1)
            break
    if fitted is None:
        clauses["polynomial_floor"] = {"verdict": False}
        raise CertificationFailure("polynomial_floor", witness=witness, report=report)
    p, C1 = fitted
    clauses["polynomial_floor"] = {
        "verdict": True,
        "p": p,
        "max_C1": max(C1.values()),
        "sup_moments_C1": {str(r): v for r, v in sup_moments(tree, ambiguity, C1).items()},
    }
    return report
