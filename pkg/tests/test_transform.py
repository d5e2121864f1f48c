import numpy as np
import pytest

from microfbi import functionals as F
from microfbi import transform as T
from microfbi.classify import power_fit

CP1 = 1 / np.sqrt(np.pi)


def pts(*atoms):
    return F.from_descriptor({"variant": "points", "atoms": list(atoms)})


def dens(support, value=1):
    return F.from_descriptor({"variant": "density", "support": support,
                              "profile": {"kind": "const", "value": value}})


def test_delta_modulus(p1, delta0):
    assert abs(T.fbi(delta0, p1, [0.0], [7.0])) == pytest.approx(CP1, rel=1e-12)
    assert abs(T.fbi(delta0, p1, [1.0], [5.0])) == pytest.approx(3.80147951105910e-3, rel=1e-10)


def test_box_at_zero_frequency(p1, box1):
    assert T.fbi(box1, p1, [0.0], [0.0]) == pytest.approx(2 * CP1, rel=1e-12)


# mpmath oracles: quad / diff of c_p exp(i(tau-w)xi - |xi|(tau-w)^2)
@pytest.mark.parametrize("mu,tau,xi,want", [
    (dens([[0, 1]]), [0.0], [16.0], 0.00228945615513058715 - 0.04250327830797877690j),
    (dens([[0, 1]]), [0.0], [-16.0], 0.00228945615513058715 + 0.04250327830797877690j),
    (pts({"x": [0.3], "alpha": [1]}), [0.5], [4.0], 1.91546483412021818 - 0.78801054253241442j),
    (pts({"x": [0.1], "alpha": [2]}), [-0.2], [-3.0], 0.49520711365779751 - 6.85888476190513755j),
])
def test_values_against_oracle(p1, mu, tau, xi, want):
    assert T.fbi(mu, p1, tau, xi) == pytest.approx(want, rel=1e-10)


def test_two_dimensional_oracles(p2):
    d = pts({"x": [0.2, -0.1]})
    assert T.fbi(d, p2, [0, 0], [3, 4]) == pytest.approx(0.24295849349300591 - 0.04925012484310082j, rel=1e-12)
    b = dens([[-1, 1], [-1, 1]])
    assert T.fbi(b, p2, [0.5, 0], [2, 1]) == pytest.approx(0.24692034834396876 + 0.05237438806492149j, rel=1e-10)


def test_delta_grid_rows(p1, delta0):
    g = T.fbi_grid(delta0, p1, {"taus": [[0.0], [1.0]], "jmax": 12})
    la = g.log_abs
    assert np.allclose(la[0], np.log(CP1), atol=1e-12)
    assert np.allclose(la[1], np.log(CP1) - g.radii, atol=1e-10)


def test_heaviside_slope(p1):
    g = T.fbi_grid(dens([[0, 1]]), p1, {"taus": [[0.0]], "directions": [[1.0]], "jmax": 12})
    fit = power_fit(g.radii[6:], g.log_abs[0, 0, 6:])
    assert abs(fit["slope"] + 1) <= 0.2


def test_conjugate_rows(p1):
    mu = F.from_descriptor({"variant": "density", "support": [[-1, 0.7]], "profile": {"kind": "expr", "expr": "1+x**2"}})
    g = T.fbi_grid(mu, p1, {"taus": [[0.3]], "jmax": 10})
    v = g.values
    assert np.allclose(v[0, 1], np.conj(v[0, 0]), rtol=1e-12, atol=0)


def test_linearity(p1, box1, delta0):
    combo = F.Combination([(2.0, box1), (0.5j, delta0)])
    for tau, xi in (([0.2], [3.0]), ([1.5], [-9.0])):
        want = 2 * T.fbi(box1, p1, tau, xi) + 0.5j * T.fbi(delta0, p1, tau, xi)
        assert T.fbi(combo, p1, tau, xi) == pytest.approx(want, rel=1e-10)


def test_tau_smoothness_second_order(p1, box1):
    f = lambda t: T.fbi(box1, p1, [t], [6.0])
    t0 = 0.4
    exact = (f(t0 + 1e-3) - f(t0 - 1e-3)) / 2e-3
    errs = [abs((f(t0 + h) - f(t0 - h)) / (2 * h) - exact) for h in (0.04, 0.02)]
    assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_rays_match_single_points(p2, delta0):
    mu = pts({"x": [0.1, 0.0], "alpha": [1, 0], "c": 2}, {"x": [0.0, -0.2]})
    radii = np.array([1.0, 4.0, 16.0])
    dirs = np.array([[1.0, 0.0], [0.6, 0.8]])
    mant, ls, ok = T.fbi_rays(mu, p2, np.array([[0.0, 0.0]]), dirs, radii)
    for d in range(2):
        for i, r in enumerate(radii):
            s = T.fbi_scaled(mu, p2, [0.0, 0.0], r * dirs[d])
            assert mant[0, d, i] * np.exp(ls[0, d, i]) == pytest.approx(s.value, rel=1e-12)


def test_csv_round_trip(p1, delta0):
    g = T.fbi_grid(delta0, p1, {"taus": [[0.0], [0.5]], "jmax": 6})
    back = T.SampleGrid.from_csv("# comment\n" + g.to_csv())
    assert np.allclose(back.log_abs, g.log_abs, rtol=1e-14)
    assert np.array_equal(back.valid, g.valid)


def test_radii_ratio_enforced(p1, delta0):
    with pytest.raises(T.TransformError):
        T.fbi_grid(delta0, p1, radii=[1.0, 1.05, 2.0])


def test_apriori_audits(p1, delta0, box1):
    g0 = T.fbi_grid(delta0, p1, {"taus": [[0.0]]})
    assert abs(T.apriori_bound_audit(g0)["max_log_growth_rate"]) < 1e-3
    gb = T.fbi_grid(box1, p1, {"taus": [[-1.5], [0.0], [1.5]], "jmax": 12})
    rep = T.apriori_bound_audit(gb, box1, p1)
    assert rep["ok"] and rep["max_abs_over_C"] <= 0
    wd = F.from_descriptor({"variant": "wedge", "g": "reciprocal", "V": [[-1, 1]], "y": [0.1]})
    gw = T.fbi_grid(wd, p1, {"taus": [[0.0]], "jmax": 16})
    assert T.apriori_bound_audit(gw, wd, p1)["ok"]


def test_inversion_outside_window_is_zero(p1, box1):
    res = T.invert(box1, p1, 0.01, [-3.0, 0.0, 3.0], W=[[-2, 2]])
    assert res.evaluation[0] == 0 and res.evaluation[2] == 0
    assert abs(res.evaluation[1] - 1) < 1e-6


def test_inversion_rejects_bad_eps(p1, box1):
    with pytest.raises(T.TransformError):
        T.invert(box1, p1, 0.0, [0.0])
