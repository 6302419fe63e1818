import math

import numpy as np
import pytest

from robustdp.errors import AssumptionFailure
from robustdp.extmath import INF
from robustdp.oneperiod import (
    compute_bounds,
    make_instance,
    maximize,
    psi_p,
    psi_robust,
    verify_nm,
)
from robustdp.utility import exp_cara, linear_power, piecewise_linear, scalar_eval


def section(spec):
    return lambda x: float(scalar_eval(spec, x))


def remark_section(l=0.8, a=0.75):
    """Two outcomes +1 / -1 with prior (l, 1-l); power-linear utility."""
    spec = linear_power(a)
    return make_instance(
        increments=[[1.0], [-1.0]],
        extremes=[[l, 1.0 - l]],
        sections=[section(spec), section(spec)],
        gamma=(1.0 + a) / 2.0,
    )


def closed_form_h(l, a):
    if l >= 0.5:
        return (l / (1.0 - l)) ** (1.0 / (1.0 - a)) - 1.0
    return 1.0 - ((1.0 - l) / l) ** (1.0 / (1.0 - a))


def closed_form_value(l, a, h):
    if h >= 0:
        return ((1.0 + h) ** a - 1.0) * l - a * h * (1.0 - l)
    return ((1.0 - h) ** a - 1.0) * (1.0 - l) + a * h * l


def test_psi_p_closed_form():
    inst = remark_section()
    got = psi_p(inst, [0.8, 0.2], 0.0, [1.0])
    want = 0.8 * (2**0.75 - 1.0) - 0.75 * 0.2
    assert got == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.395435, abs=1e-6)


def test_psi_trivia():
    inst = remark_section()
    zero = piecewise_linear([0.0], [1.0, 1.0])
    # h = 0 with V(., 0) = 0
    inst0 = make_instance(
        increments=[[1.0], [-1.0]],
        extremes=[[0.5, 0.5]],
        sections=[section(zero), section(zero)],
        gamma=0.9,
    )
    assert psi_p(inst0, [0.5, 0.5], 0.0, [0.0]) == 0.0
    # Dirac prior on one outcome
    assert psi_p(inst, [1.0, 0.0], 2.0, [3.0]) == pytest.approx(
        float(scalar_eval(linear_power(0.75), 5.0))
    )


def test_psi_robust_min_over_extremes():
    spec = linear_power(0.75)
    inst = make_instance(
        increments=[[1.0], [-1.0]],
        extremes=[[0.8, 0.2], [0.3, 0.7], [0.55, 0.45]],
        sections=[section(spec), section(spec)],
        gamma=0.875,
    )
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = float(rng.uniform(-3, 3))
        h = float(rng.uniform(-3, 3))
        robust = psi_robust(inst, x, [h])
        per_extreme = [psi_p(inst, row, x, [h]) for row in inst.extremes]
        assert robust == pytest.approx(min(per_extreme), abs=1e-12)
        w = rng.dirichlet(np.ones(3))
        mix = w @ inst.extremes
        assert robust <= psi_p(inst, mix, x, [h]) + 1e-12


def test_maximize_matches_remark_closed_form():
    for l in (0.5, 0.65, 0.8):
        inst = remark_section(l=l)
        bounds = compute_bounds(inst, C_of_outcome=[1.0, 1.0])
        res = maximize(inst, 0.0, bounds, tol=1e-10)
        want = closed_form_h(l, 0.75)
        if want == 0.0:
            assert abs(res.h[0]) < 1e-6
        else:
            assert res.h[0] == pytest.approx(want, rel=1e-4)
        assert res.value == pytest.approx(closed_form_value(l, 0.75, want), abs=1e-8)
        assert not res.boundary_flag


def test_maximize_dim0():
    spec = exp_cara()
    inst = make_instance(
        increments=[[0.0], [0.0]],
        extremes=[[0.6, 0.4]],
        sections=[section(spec), section(spec)],
        gamma=2.0,
    )
    bounds = compute_bounds(inst, [0.0, 0.0])
    res = maximize(inst, 1.5, bounds)
    assert res.h.tolist() == [0.0]
    assert res.value == pytest.approx(float(scalar_eval(spec, 1.5)))


def test_bounds_deterministic_threshold():
    # V(x) = a x below 0: the threshold condition is a plain inequality
    a, c = 0.75, 2.0
    spec = linear_power(a)
    inst = make_instance(
        increments=[[1.0], [-1.0]],
        extremes=[[0.5, 0.5]],
        sections=[section(spec), section(spec)],
        gamma=(1 + a) / 2,
    )
    bounds = compute_bounds(inst, [c, c])
    alpha = inst.alpha_star
    want = math.ceil((1.0 + 2.0 * c / alpha) / a)
    assert bounds.n0_star == want
    assert bounds.c_star == pytest.approx(c)


def test_bounds_flat_indicator_fails_threshold():
    # V = section only on a thin event: mass below never reaches 1 - alpha/2
    hit = exp_cara()
    flat = piecewise_linear([0.0], [0.0, 0.0])
    inst = make_instance(
        increments=[[2.0], [1.0], [-1.0], [-2.0]],
        extremes=[[0.25, 0.25, 0.25, 0.25]],
        sections=[section(hit), section(flat), section(flat), section(flat)],
        gamma=2.0,
    )
    with pytest.raises(AssumptionFailure) as err:
        compute_bounds(inst, [1.0, 1.0, 1.0, 1.0])
    assert err.value.assumption == "pb_inequality"


def test_k0_direct_formula():
    # alpha = 1 instance: symmetric two-point with full mass on losses either way
    spec = linear_power(0.75)
    inst = make_instance(
        increments=[[1.0], [-1.0]],
        extremes=[[0.5, 0.5]],
        sections=[section(spec), section(spec)],
        gamma=0.875,
    )
    bounds = compute_bounds(inst, [0.0, 0.0])
    n0, alpha, eta = bounds.n0_star, bounds.alpha_star, bounds.eta
    want = max(1.0, 0.0, (0.0 + n0) / alpha, ((0.0 + n0) / alpha) ** (1 / (1 - eta)))
    assert bounds.K0(0.0) == pytest.approx(want)


def test_suboptimality_and_positive_part_bounds():
    rng = np.random.default_rng(11)
    spec = linear_power(0.75)
    inst = make_instance(
        increments=[[1.0], [-0.5], [-2.0]],
        extremes=[[0.5, 0.3, 0.2], [0.2, 0.4, 0.4]],
        sections=[section(spec)] * 3,
        gamma=0.875,
    )
    bounds = compute_bounds(inst, [0.5, 0.5, 0.5])
    for x in (-1.0, 0.0, 1.5):
        K1 = bounds.K1(x)
        base = psi_robust(inst, x, [0.0])
        for _ in range(10):
            r = float(rng.uniform(K1, 2 * K1))
            s = r if rng.random() < 0.5 else -r
            assert psi_robust(inst, x, [s]) <= base + 1e-8
        for _ in range(20):
            h = float(rng.uniform(-5, 5))
            lhs = sum(
                p * max(section(spec)(x + h * float(y)), 0.0)
                for p, y in zip(inst.p_star, inst.increments[:, 0])
            )
            cap = max(abs(h), max(x, 0.0), 1.0) ** bounds.gamma_lo * (
                bounds.l_star + bounds.c_star
            )
            assert lhs <= cap + 1e-8


def test_value_monotone_concave_in_x():
    inst = remark_section(l=0.65)
    bounds = compute_bounds(inst, [1.0, 1.0])
    xs = np.linspace(-5, 5, 11)
    vals = [maximize(inst, float(x), bounds).value for x in xs]
    for a, b in zip(vals, vals[1:]):
        assert b >= a - 1e-9
    for i in range(1, len(vals) - 1):
        assert vals[i] >= 0.5 * (vals[i - 1] + vals[i + 1]) - 1e-8


def test_verify_nm():
    inst = remark_section(l=0.8)
    bounds = compute_bounds(inst, [1.0, 1.0])
    for m in (1, 2, 5):
        chk = verify_nm(inst, bounds, m)
        assert chk.status in ("ok", "untested")
        if chk.status == "ok":
            assert chk.value <= -m + 1e-7


def test_concavity_of_psi():
    inst = remark_section(l=0.7)
    rng = np.random.default_rng(3)
    for _ in range(200):
        x1, x2 = rng.uniform(-20, 20, size=2)
        h1, h2 = rng.uniform(-20, 20, size=2)
        t = rng.uniform(0.01, 0.99)
        lhs = psi_robust(inst, t * x1 + (1 - t) * x2, [t * h1 + (1 - t) * h2])
        rhs = t * psi_robust(inst, x1, [h1]) + (1 - t) * psi_robust(inst, x2, [h2])
        assert lhs >= rhs - 1e-8
