import math

import numpy as np
import pytest

from microfbi import phase as P


def quartic2():
    return P.PhasePolynomial(2, 2, [((4, 0), 1.0), ((0, 4), 1.0)])


def test_square_positivity():
    assert P.validate_positivity(P.square_phase(1)) == {"c": 1.0, "C": 1.0, "samples": 2}
    r = P.validate_positivity(P.square_phase(2))
    assert r["c"] == pytest.approx(1.0, abs=1e-15) and r["C"] == pytest.approx(1.0, abs=1e-15)


def test_quartic_min_at_diagonal():
    r = P.validate_positivity(quartic2())
    assert r["c"] == pytest.approx(0.5, rel=1e-3)
    assert r["C"] == pytest.approx(1.0, rel=1e-12)


def test_degenerate_quartic_rejected():
    p = P.PhasePolynomial(2, 2, [((2, 2), 1.0)])
    with pytest.raises(P.PhaseRejected):
        P.validate_positivity(p)


def test_construction_errors():
    with pytest.raises(P.PhaseRejected):
        P.PhasePolynomial(1, 1, [((3,), 1.0)])
    with pytest.raises(P.PhaseRejected):
        P.PhasePolynomial(1, 1, [((2,), 0.0)])
    with pytest.raises(P.PhaseRejected):
        P.PhasePolynomial(1, 1, [((2,), 1j)])
    with pytest.raises(P.PhaseRejected):
        P.PhasePolynomial.from_descriptor({"N": 1, "k": 1})


def test_cone_constant_at_half():
    lo, _ = P.cone_constants(P.square_phase(1), 0.5)
    assert lo == pytest.approx(0.6, rel=1e-9)
    lo2, _ = P.cone_constants(P.square_phase(2), 0.5)
    assert lo2 == pytest.approx(0.6, rel=1e-6)


def test_rho_one_inadmissible():
    with pytest.raises(P.PhaseRejected):
        P.fit_complex_cone(P.square_phase(1), [1.0])
    lo, _ = P.cone_constants(P.square_phase(1), 0.999999)
    assert lo < 1e-5


def test_normalization_constants():
    assert P.normalization_constant(P.square_phase(1)) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-10)
    assert P.normalization_constant(P.square_phase(2)) == pytest.approx(1 / math.pi, rel=1e-9)
    quart = P.PhasePolynomial(1, 2, [((4,), 1.0)])
    # mpmath quad of exp(-x^4) over the line
    assert P.normalization_constant(quart) == pytest.approx(0.551631325660418629, rel=1e-10)


def test_certificate_fields():
    cert = P.certify(P.square_phase(1))
    assert cert.c == cert.C == 1.0
    assert cert.rho == pytest.approx(0.95)
    assert cert.c_prime == pytest.approx((1 - 0.95 ** 2) / (1 + 0.95 ** 2), rel=1e-9)


def test_good_phase_single_point():
    p = P.square_phase(1)
    P.certify(p)
    rep = P.check_good_phase(p, lam=0.5, w_grid=[[0.3 + 0.2j]], t_grid=(2.0,), integrability=False)
    assert rep["max_deviation"] <= 1e-6


def test_good_phase_rejects_lambda_one_over_k():
    with pytest.raises(P.PhaseRejected):
        P.check_good_phase(P.square_phase(1), lam=1.0)


def test_integrability_bound_finite():
    p = P.square_phase(1)
    rep = P.check_good_phase(p, lam=0.5, t_grid=(1.0,), eps=0.1, K=(-1.0, 1.0), delta=0.1)
    M = rep["integrability"]["M"]
    assert np.isfinite(M) and M > 0


def test_homogeneity_samples():
    rng = np.random.default_rng(3)
    p = quartic2()
    x = rng.normal(size=(20, 2))
    for t in (0.3, 2.0, 7.0):
        assert np.allclose(p(t * x), t ** 4 * p(x), rtol=1e-12)
