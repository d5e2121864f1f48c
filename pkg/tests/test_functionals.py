import numpy as np
import pytest

from microfbi import functionals as F


def test_delta_on_square(delta0):
    assert delta0.apply(F.named_test("w2", 1)) == 0


def test_box_mass(box1):
    assert box1.apply(F.named_test("one", 1)) == pytest.approx(2.0, rel=1e-14)


def test_wedge_reciprocal_pairing():
    wd = F.from_descriptor({"variant": "wedge", "g": "reciprocal", "V": [[-1, 1]], "y": [0.1]})
    # mpmath quad of 1/(x + 0.1i) over [-1, 1]
    assert wd.apply(F.named_test("one", 1)) == pytest.approx(-2.94225534860746917j, rel=1e-10)


def test_derivative_atom_convention():
    mu = F.from_descriptor({"variant": "points", "atoms": [{"x": [0.5], "alpha": [1], "c": 2.0}]})
    h = F.named_test("exp", 1, a=3)
    assert mu.apply(h) == pytest.approx(2 * 3 * np.exp(1.5), rel=1e-12)


def test_linearity(box1, delta0):
    h, g = F.named_test("cos", 1), F.named_test("exp", 1)
    combo = F.Combination([(2.0, box1), (-1.5j, delta0)])
    assert combo.apply(h) == pytest.approx(2 * box1.apply(h) - 1.5j * delta0.apply(h), rel=1e-13)
    hg = F.TestFunction(h.expr + 3 * g.expr, 1)
    assert box1.apply(hg) == pytest.approx(box1.apply(h) + 3 * box1.apply(g), rel=1e-13)


def test_wedge_constant_matches_shifted_density():
    wd = F.from_descriptor({"variant": "wedge", "g": "one", "V": [[-1, 1]], "y": [0.2]})
    h = F.named_test("exp", 1, a=1)
    # int_{[-1,1]+0.2i} e^z dz = e^{1+0.2i} - e^{-1+0.2i}
    exact = np.exp(1 + 0.2j) - np.exp(-1 + 0.2j)
    assert wd.apply(h) == pytest.approx(exact, rel=1e-12)


def test_carrier_bound(box1):
    for name in ("cos", "sin"):
        assert abs(box1.apply(F.named_test(name, 1))) <= 2.0


def test_unknown_variant():
    with pytest.raises(F.FunctionalError):
        F.from_descriptor({"variant": "mystery"})
    with pytest.raises(F.FunctionalError):
        F.named_test("nope")


def test_heat_approx_center_and_far():
    h = F.heat_approx(F.named_test("one", 1), [[-2, 2]], 1e-2)
    H = h["H"]
    assert abs(H(np.array([0.0])) - 1) <= 1e-3
    assert abs(H(np.array([10.0]))) <= 1e-3


def test_heat_approx_error_shrinks():
    errs = [F.heat_approx(F.named_test("cos", 1), [[-2, 2]], e)["sup_error"] for e in (0.04, 0.02, 0.01, 0.005)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_boundary_carried_examples(p1, box1):
    assert F.difference_is_boundary_carried(box1, box1, p1)["result"]
    shifted = F.from_descriptor({"variant": "combination", "parts": [
        {"a": 1, "functional": {"variant": "density", "support": [[-1, 0.5]], "profile": {"kind": "const", "value": 1}}},
        {"a": 0.5, "functional": {"variant": "points", "atoms": [{"x": [0.75]}]}}]})
    assert not F.difference_is_boundary_carried(box1, shifted, p1, taus=[[0.75]])["result"]
    plus_edge = F.Combination([(1, box1), (1, F.from_descriptor({"variant": "points", "atoms": [{"x": [1.0]}]}))])
    assert F.difference_is_boundary_carried(box1, plus_edge, p1)["result"]
