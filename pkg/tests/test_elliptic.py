import numpy as np
import pytest
import sympy as sp

from microfbi import elliptic as E
from microfbi import functionals as F
from microfbi.classify import SheafCondition

BASIC = [SheafCondition(k) for k in ("Cw", "Cinf", "Dprime")]


def op(N, terms, basis="partial"):
    return E.DifferentialOperator(N, terms, basis)


LAPLACE = op(2, [((2, 0), 1), ((0, 2), 1)])
HEAT = op(2, [((1, 0), 1), ((0, 2), -1)])
CR = op(2, [((1, 0), 1), ((0, 1), sp.I)])
z1 = E.zsyms(1)[0]
QUAD = E.DifferentialOperator(1, [((2,), 1), ((1,), z1)])  # D^2 + x D


def test_principal_symbols():
    assert E.principal_symbol(LAPLACE, [0, 0], [0.6, 0.8]) == pytest.approx(-1.0)
    assert E.principal_symbol(HEAT, [0, 0], [0.3, 2.0]) == pytest.approx(4.0)
    assert E.principal_symbol(CR, [0, 0], [1.0, 0.0]) == pytest.approx(1j)
    assert E.principal_symbol(CR, [0, 0], [0.0, 1.0]) == pytest.approx(-1.0)
    with pytest.raises(E.OperatorError):
        E.principal_symbol(CR, [0, 0], [0, 0])


def test_char_sets():
    sph = E.sphere_grid(2, 64)
    x = [[0.0, 0.0], [0.5, -0.3]]
    assert E.char_set_sample(LAPLACE, x, sph) == []
    assert E.char_set_sample(CR, x, sph) == []
    heat = E.char_set_sample(HEAT, x, sph)
    assert len(heat) == 4
    assert all(abs(t[1]) < 1e-12 for _, t in heat)


def test_char_set_invariant_under_nonvanishing_factor():
    z = E.zsyms(2)
    g = sp.exp(z[0]) * (2 + sp.cos(z[1]))
    scaled = op(2, [(a, c * g) for a, c in HEAT.terms], basis="D")
    sph = E.sphere_grid(2, 64)
    x = [[0.0, 0.0], [0.7, 0.2]]
    assert E.char_set_sample(scaled, x, sph) == E.char_set_sample(HEAT, x, sph)


def test_declared_order_checked():
    d = {"N": 1, "m": 3, "terms": [{"alpha": [2], "coef": 1}]}
    with pytest.raises(E.OperatorError):
        E.DifferentialOperator.from_descriptor(d)


def test_compose_inverse_square():
    xi = E.xisyms(1)[0]
    p = E.SymbolExpansion(1, {2: xi ** 2})
    q = E.SymbolExpansion(1, {-2: xi ** -2})
    assert E.compose_symbols(p, q).terms == {0: 1}


def test_compose_linear_and_reciprocal():
    z, = E.zsyms(1)
    xi, = E.xisyms(1)
    p = E.SymbolExpansion(1, {1: z * xi})
    q = E.SymbolExpansion(1, {-1: 1 / (z * xi)})
    pq = E.compose_symbols(p, q)
    assert sp.simplify(pq.expr() - (1 + sp.I / (z * xi))) == 0
    z0, x0 = 0.7 + 0.2j, 3.0
    assert E.compose_symbols_numeric(p, q, 1, [z0], [x0]) == pytest.approx(1 + 1j / (z0 * x0), rel=1e-12)


def test_compose_with_zero():
    xi, = E.xisyms(1)
    assert E.compose_symbols(E.SymbolExpansion(1, {1: xi}), E.SymbolExpansion(1, {})).is_zero()


def test_composition_associative_to_truncation():
    z, = E.zsyms(1)
    xi, = E.xisyms(1)
    a = E.SymbolExpansion(1, {1: z * xi, 0: z ** 2})
    b = E.SymbolExpansion(1, {-1: 1 / (xi * (1 + z ** 2))})
    c = E.SymbolExpansion(1, {-1: sp.exp(z) / xi})
    J = 3
    lhs = E.compose_symbols(E.compose_symbols(a, b, J), c, J)
    rhs = E.compose_symbols(a, E.compose_symbols(b, c, J), J)
    low = a.top() + b.top() + c.top() - J
    diff = (lhs - rhs).truncate(low)
    assert all(sp.simplify(e) == 0 for e in diff.terms.values())


def test_homogeneity_of_terms():
    res = E.parametrix(QUAD, 2, box=[[0.5, 1.5]], z0=[1.0])
    rays = [[1.0], [-1.0]]
    for s in (res["a_J"], res["r"], res["remainder"]):
        assert s.homogeneity_error([1.0], rays) <= 1e-8


def test_laplacian_parametrix_exact():
    res = E.parametrix(LAPLACE, 2)
    assert res["r"].is_zero()
    assert res["a_J"].terms == {-2: -1 / (E.xisyms(2)[0] ** 2 + E.xisyms(2)[1] ** 2)}
    assert res["probe_max"] <= 1e-12


def test_quadratic_remainder_formula():
    z, = E.zsyms(1)
    xi, = E.xisyms(1)
    r = E.remainder_formula(QUAD)
    assert r.terms == {-1: z / xi}
    assert E.remainder_by_composition(QUAD).terms == r.terms


def test_parametrix_requires_ellipticity():
    with pytest.raises(E.EllipticityError):
        E.parametrix(HEAT, 1)


@pytest.mark.parametrize("J", [1, 2, 3])
def test_parametrix_slope(J):
    res = E.parametrix(QUAD, J, box=[[0.5, 1.5]], z0=[1.0])
    assert res["slope"] <= -(J + 1) + 0.3


def test_ramp_image_routes_agree():
    P = op(1, [((2,), 1)])
    ramp = F.from_descriptor({"variant": "density", "support": [[0, 1]], "profile": {"kind": "expr", "expr": "x"}})
    ex = E.apply_operator(P, ramp, "explicit")
    tr = E.apply_operator(P, ramp, "transpose")
    for name in ("exp", "cos", "w2"):
        h = F.named_test(name, 1, a=1.3)
        # int_0^1 x h'' = h'(1) - h(1) + h(0)
        w = sp.Symbol("w1")
        hh = h.expr
        want = complex(sp.N((sp.diff(hh, w) - hh).subs(w, 1) + hh.subs(w, 0)))
        assert ex.apply(h) == pytest.approx(want, rel=1e-12, abs=1e-14)
        assert tr.apply(h) == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_points_image_routes_agree():
    mu = F.from_descriptor({"variant": "points", "atoms": [{"x": [0.2], "alpha": [1], "c": 2}]})
    ex = E.apply_operator(QUAD, mu, "explicit")
    tr = E.apply_operator(QUAD, mu, "transpose")
    h = F.named_test("exp", 1, a=0.7)
    assert ex.apply(h) == pytest.approx(tr.apply(h), rel=1e-12)


def test_wedge_not_explicit():
    wd = F.from_descriptor({"variant": "wedge", "g": "reciprocal", "V": [[-1, 1]], "y": [0.1]})
    with pytest.raises(E.NotRepresentable):
        E.apply_operator(op(1, [((2,), 1)]), wd, "explicit")


def test_ramp_audit(p1):
    P = op(1, [((2,), 1)])
    ramp = F.from_descriptor({"variant": "density", "support": [[0, 1]], "profile": {"kind": "expr", "expr": "x"}})
    out = E.elliptic_wf_audit(P, ramp, p1, {"taus": [[0.0], [0.5]]}, BASIC, route="explicit")
    assert all(r.consistent for r in out["reports"])
    assert out["estimate"].failing("Cinf") == [((0.0,), (1.0,)), ((0.0,), (-1.0,))]


def test_delta_laplacian_audit(p2):
    d = F.from_descriptor({"variant": "points", "atoms": [{"x": [0.0, 0.0]}]})
    out = E.elliptic_wf_audit(LAPLACE, d, p2, {"taus": [[0.0, 0.0]], "n_dir": 8}, BASIC)
    assert all(r.consistent for r in out["reports"])
    assert len(out["estimate"].failing("Cinf")) == 8
    assert len(out["image_estimate"].failing("Cinf")) == 8
