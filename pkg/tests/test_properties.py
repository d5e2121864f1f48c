"""Invariants checked on generated instances."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from microfbi import classify as C
from microfbi import cones
from microfbi import functionals as F
from microfbi import phase as P
from microfbi import sequences as S
from microfbi import transform as T

SETTINGS = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
reals = st.floats(-1.0, 1.0, allow_nan=False)


@SETTINGS
@given(st.floats(1.05, 4.0), st.integers(1, 30), st.integers(1, 30))
def test_m2_induction(s, k, l):
    M = S.make_gevrey(s, k_max=64)
    A, H = M.fitted_A, M.fitted_H
    lm = M.log_entries
    rhs = l * (np.log(A) + k * np.log(H)) + l * (l + 1) / 2 * np.log(H) + lm[k]
    assert lm[k + l] <= rhs + 1e-9


@SETTINGS
@given(st.floats(1.0, 4.0), st.floats(1e-3, 1.0), st.floats(1.0, 1e4), st.floats(1.0, 50.0))
def test_associated_monotone_and_zero_below_one(s, t_small, t, factor):
    M = S.make_gevrey(s)
    assert M.associated(t_small) == 0.0
    assert M.associated(t * factor) >= M.associated(t)


@SETTINGS
@given(st.floats(1.11, 3.0))
def test_gevrey_non_quasianalytic(s):
    assert S.quasianalytic_test(S.make_gevrey(s))["verdict"] == "non-quasianalytic"


@SETTINGS
@given(st.floats(1.03, 1.09))
def test_gevrey_near_analytic_never_quasianalytic(s):
    assert S.quasianalytic_test(S.make_gevrey(s))["verdict"] == "inconclusive"


@SETTINGS
@given(st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3), st.floats(0.1, 5.0),
       st.lists(reals, min_size=2, max_size=2), st.lists(reals, min_size=2, max_size=2))
def test_phase_homogeneity(coefs, lam, x, y):
    p = P.PhasePolynomial(2, 2, [((4, 0), coefs[0]), ((2, 2), coefs[1]), ((0, 4), coefs[2])])
    z = np.array(x) + 1j * np.array(y)
    assert np.allclose(p(lam * z), lam ** 4 * p(z), rtol=1e-12, atol=1e-14)
    assert np.isclose(np.real(p(lam ** 0.25 * z)), lam * np.real(p(z)), rtol=1e-12, atol=1e-14)


@SETTINGS
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1.5, 1.5), st.floats(0.5, 40))
def test_functional_and_transform_linearity(a, b, tau, r):
    p = P.square_phase(1)
    m1 = F.from_descriptor({"variant": "density", "support": [[-1, 0.5]], "profile": {"kind": "expr", "expr": "1+x**2"}})
    m2 = F.from_descriptor({"variant": "points", "atoms": [{"x": [0.3]}, {"x": [-0.2], "alpha": [1], "c": 0.5}]})
    combo = F.Combination([(a, m1), (b, m2)])
    h = F.named_test("cos", 1, a=2)
    assert np.isclose(combo.apply(h), a * m1.apply(h) + b * m2.apply(h), rtol=1e-12, atol=1e-13)
    want = a * T.fbi(m1, p, [tau], [r]) + b * T.fbi(m2, p, [tau], [r])
    got = T.fbi(combo, p, [tau], [r])
    scale = abs(a * T.fbi(m1, p, [tau], [r])) + abs(b * T.fbi(m2, p, [tau], [r])) + 1e-300
    assert abs(got - want) <= 1e-10 * scale


@SETTINGS
@given(st.floats(-1.5, 1.5), st.floats(0.5, 60))
def test_conjugate_symmetry(tau, r):
    p = P.square_phase(1)
    mu = F.from_descriptor({"variant": "density", "support": [[-0.4, 1]], "profile": {"kind": "expr", "expr": "exp(x)"}})
    v_plus = T.fbi(mu, p, [tau], [r])
    v_minus = T.fbi(mu, p, [tau], [-r])
    assert abs(v_minus - np.conj(v_plus)) <= 1e-12 * max(abs(v_plus), 1e-300)


ray = st.lists(st.floats(-3.0, 3.0), min_size=25, max_size=25)


@SETTINGS
@given(st.floats(-2.0, 0.0), st.floats(-3.0, 3.0), st.floats(0.0, 2.0), ray, st.floats(-50, 50))
def test_lattice_and_scaling_on_synthetic_rays(rate, slope, noise, jitter, shift):
    r = 2.0 ** (np.arange(25) / 2.0)
    la = rate * r + slope * np.log(r) + noise * np.array(jitter) * 0.1
    M = S.make_gevrey(2)
    conds = [C.SheafCondition(k) for k in ("Cw", "Cinf", "Dprime")] + [C.SheafCondition(k, M) for k in C.M_KINDS]
    ok = np.ones(25, bool)
    v1 = C.classify_ray(r, la, ok, conds)
    v2 = C.classify_ray(r, la + shift, ok, conds)
    assert {k: v.holds for k, v in v1.items()} == {k: v.holds for k, v in v2.items()}
    est = C.WavefrontEstimate(np.zeros((1, 1)), np.ones((1, 1)), conds, {(0, 0): v1}, {})
    assert C.lattice_violations(est, [M]) == []


@SETTINGS
@given(st.integers(3, 10), st.floats(0, 2 * np.pi), st.floats(0.0, 0.3), st.integers(0, 2 ** 32))
def test_cover_invariants(L, ang, beta, seed):
    cov = cones.build_cover(2, L, [np.cos(ang), np.sin(ang)], beta=beta, seed=seed)
    rep = cones.validate_cover(cov, n_pairs=200, seed=seed)
    assert rep["tiling"] and rep["opposite_cone"]
    assert sum(c.opening for c in cov.cones) == np.float64(2 * np.pi) or \
        abs(sum(c.opening for c in cov.cones) - 2 * np.pi) < 1e-12
    rng = np.random.default_rng(seed)
    for G in cov.duals[1:]:
        assert np.all(G.sample(50, rng) @ cov.xi0 < 0)
