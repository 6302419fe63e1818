import json
import math

import numpy as np
import pytest

from robustdp.errors import (
    AssumptionFailure,
    CertificationFailure,
    DomainError,
    ParameterError,
    RAEViolation,
    UnknownLeaf,
)
from robustdp.extmath import INF
from robustdp.market import load_market
from robustdp.utility import (
    AECertificate,
    RandomUtility,
    asymptotic_elasticity,
    assumption5_lowerbar,
    certificate_for,
    certify_type_A,
    construct_gamma_C,
    exp_cara,
    gamma1_bound_check,
    linear,
    linear_power,
    piecewise_linear,
    scalar_eval,
    sweep_certificate,
    utility_from_json,
    utility_to_json,
)

from test_market import two_period_doc


def test_linear_power_values():
    u = linear_power(0.75)
    assert scalar_eval(u, -2.0) == pytest.approx(-1.5)
    assert scalar_eval(u, 0.0) == 0.0
    assert scalar_eval(u, 1.0) == pytest.approx(2**0.75 - 1)
    with pytest.raises(ParameterError):
        linear_power(1.2)


def test_benchmark_shift_cancels():
    u = RandomUtility("benchmark", base=exp_cara(), Z={"a": 1.0})
    assert u.eval("a", 1.0) == pytest.approx(0.0)
    with pytest.raises(UnknownLeaf):
        u.eval("b", 1.0)


def test_table_kind_and_json_roundtrip():
    u = RandomUtility(
        "table",
        table={"a": exp_cara(offset=2.0), "b": linear_power(0.6)},
    )
    assert u.eval("a", 0.0) == pytest.approx(2.0)
    again = utility_from_json(utility_to_json(u))
    assert again.kind == "table"
    assert again.eval("b", -1.0) == pytest.approx(-0.6)


def test_validation_rejects_convex_or_plus_inf():
    with pytest.raises(ParameterError):
        piecewise_linear([0.0], [1.0, 2.0])  # increasing slopes
    bad = piecewise_linear([0.0], [1.0, 2.0], validate=False)
    with pytest.raises(ParameterError):
        RandomUtility("deterministic", base=bad)


def test_floor_gives_minus_inf():
    spec = piecewise_linear([0.0], [1.0, 1.0], floor=-5.0)
    assert scalar_eval(spec, -6.0) == -INF
    assert scalar_eval(spec, -5.0) == pytest.approx(-5.0)
    RandomUtility("deterministic", base=spec)  # still a legal section


def test_asymptotic_elasticity_closed_forms():
    for a in (0.6, 0.75, 0.9):
        est = asymptotic_elasticity(linear_power(a), INF)
        assert est.converged and est.value == pytest.approx(a, abs=1e-4)
    est = asymptotic_elasticity(exp_cara(), -INF)
    assert est.value == INF
    est = asymptotic_elasticity(linear(), INF)
    assert est.converged and est.value == pytest.approx(1.0, abs=1e-9)
    est = asymptotic_elasticity(linear(), -INF)
    assert est.value == pytest.approx(1.0, abs=1e-9)
    # linear_power left tail is exactly linear: elasticity 1
    est = asymptotic_elasticity(linear_power(0.75), -INF)
    assert est.value == pytest.approx(1.0, abs=1e-6)


def test_concave_builtin_elasticity_bounds():
    specs = [linear_power(0.6), linear_power(0.9), exp_cara(), linear(),
             piecewise_linear([-1.0, 1.0], [3.0, 2.0, 1.0])]
    for spec in specs:
        assert asymptotic_elasticity(spec, INF).value <= 1.0 + 1e-6
        assert asymptotic_elasticity(spec, -INF).value >= 1.0 - 1e-6


def test_elasticity_domain_error():
    flat = piecewise_linear([0.0], [1.0, 0.0], value0=0.0)
    with pytest.raises(DomainError):
        asymptotic_elasticity(flat, INF)


def test_construct_gamma_C_exp_cara_minus_side():
    cert = construct_gamma_C(exp_cara(), 2.0)
    assert cert.side == "minus_infinity"
    assert cert.anchors["x_low"] < 0.0
    # sweep oracle over lambda in [1, 1e4], x in [-1e3, 1e3]
    rng = np.random.default_rng(1)
    for _ in range(2000):
        lam = float(rng.uniform(1.0, 1e4))
        x = float(rng.uniform(-1e3, 1e3))
        ux = scalar_eval(exp_cara(), x)
        lhs = scalar_eval(exp_cara(), lam * x)
        if ux == -INF:  # float saturation: both sides are -inf
            assert lhs == -INF
            continue
        assert lhs <= lam**2.0 * (ux + cert.C) + 1e-9 * (1.0 + abs(ux))


def test_construct_gamma_C_linear_power_plus_side():
    cert = construct_gamma_C(linear_power(0.75), 0.9)
    assert cert.side == "plus_infinity"
    spec = linear_power(0.75)
    want = (
        max(scalar_eval(spec, cert.anchors["x_bar"]), 0.0)
        + max(-scalar_eval(spec, cert.anchors["x_prime"]), 0.0)
        + max(-scalar_eval(spec, 0.0), 0.0)
    )
    assert cert.C == pytest.approx(want)


def test_construct_gamma_C_linear_raises():
    with pytest.raises(RAEViolation):
        construct_gamma_C(linear(), 2.0)
    with pytest.raises(RAEViolation):
        construct_gamma_C(linear(), 0.5)


def test_gamma1_bound_check():
    assert gamma1_bound_check(exp_cara())
    assert gamma1_bound_check(linear())
    corrupted = piecewise_linear([1.0], [1.0, 3.0], value0=1.0, validate=False)
    assert not gamma1_bound_check(corrupted)


def test_assumption5_lowerbar_exp_cara_closed_form():
    # additive random income e^{e^z} on two leaves, constant growth constant
    base_cert = construct_gamma_C(exp_cara(), 2.0)
    zs = {"a": 1.0, "b": -0.5}
    table = {leaf: exp_cara(offset=math.exp(math.exp(z))) for leaf, z in zs.items()}
    u = RandomUtility("table", table=table)
    cert = AECertificate(gamma=2.0, side="minus_infinity",
                         C_of_leaf={l: base_cert.C for l in zs})
    xbar = assumption5_lowerbar(u, cert)
    for leaf, z in zs.items():
        target = -base_cert.C - 1.0 - math.exp(math.exp(z))
        closed = -math.log(1.0 - target)  # inverse of 1 - exp(-x)
        assert xbar[leaf] == pytest.approx(closed, abs=1e-8)
        assert u.eval(leaf, xbar[leaf]) < -cert.C(leaf)


def test_assumption5_lowerbar_deterministic_always_succeeds():
    u = RandomUtility("deterministic", base=linear_power(0.8))
    cert = certificate_for(u)
    out = assumption5_lowerbar(u, cert)
    assert out["*"] < 0.0


def test_assumption5_lowerbar_flat_indicator_fails():
    # flat-zero section on a leaf: never 'negative enough'
    u = RandomUtility(
        "table",
        table={"hit": exp_cara(), "miss": piecewise_linear([0.0], [0.0, 0.0])},
    )
    cert = AECertificate(gamma=2.0, side="minus_infinity",
                         C_of_leaf={"hit": 10.0, "miss": 10.0})
    with pytest.raises(AssumptionFailure) as err:
        assumption5_lowerbar(u, cert)
    assert err.value.assumption == "lower_bar"
    assert err.value.node == "miss"


def _remark9_like_tree():
    return load_market(json.dumps(two_period_doc()))


def test_certify_type_a_benchmark_true():
    tree, amb = _remark9_like_tree()
    z = {leaf: 0.3 * i for i, leaf in enumerate(tree.leaves())}
    u = RandomUtility("benchmark", base=linear_power(0.75), Z=z)
    report = certify_type_A(u, tree, amb)
    assert report.overall
    assert report.clauses["polynomial_floor"]["p"] == 1.0


def test_certify_type_a_deterministic_fitted_constants():
    tree, amb = _remark9_like_tree()
    u = RandomUtility("deterministic", base=linear_power(0.75))
    report = certify_type_A(u, tree, amb)
    assert report.overall
    assert report.clauses["polynomial_floor"]["p"] == 1.0
    assert report.clauses["polynomial_floor"]["max_C1"] == pytest.approx(0.75, abs=1e-2)


def test_certify_type_a_linear_fails_ae_clause():
    tree, amb = _remark9_like_tree()
    u = RandomUtility("deterministic", base=linear())
    with pytest.raises(CertificationFailure) as err:
        certify_type_A(u, tree, amb)
    assert err.value.clause == "ae_certificate"


def test_certificate_sweeps_pass_for_benchmark():
    tree, _ = _remark9_like_tree()
    z = {leaf: (-1.0) ** i * 2.0 for i, leaf in enumerate(tree.leaves())}
    u = RandomUtility("benchmark", base=exp_cara(), Z=z)
    cert = certificate_for(u)
    sweep_certificate(u, cert)  # raises on violation
    assert cert.side == "minus_infinity" and cert.gamma == 2.0
