import numpy as np
import pytest

from microfbi import classify as C
from microfbi import functionals as F
from microfbi import sequences as S

R = 2.0 ** (np.arange(25) / 2.0)
BASIC = [C.SheafCondition(k) for k in ("Cw", "Cinf", "Dprime")]


def verdicts(la):
    out = C.classify_ray(R, la, np.ones(len(R), bool), BASIC)
    return {k: v.holds for k, v in out.items()}


def test_flat_ray():
    assert verdicts(np.full(len(R), np.log(0.56))) == {"Cw": "no", "Cinf": "no", "Dprime": "yes"}


def test_exponential_ray_rate():
    la = np.log(0.56) - R
    out = C.classify_ray(R, la, np.ones(len(R), bool), BASIC)
    assert out["Cw"].holds == "yes"
    assert out["Cw"].fit["c2"] == pytest.approx(1.0, rel=0.05)


def test_power_ray():
    la = -np.log(R)
    assert verdicts(la) == {"Cw": "no", "Cinf": "no", "Dprime": "yes"}


def test_growth_beyond_cap_is_not_distribution():
    assert verdicts(20 * np.log(R))["Dprime"] == "no"


def test_short_window_is_inconclusive():
    r = R[:4]
    out = C.classify_ray(r, -r, np.ones(4, bool), BASIC)
    assert all(v.holds == "inconclusive" for v in out.values())


def test_invalid_cells_dropped():
    la = np.log(0.56) - R
    valid = np.ones(len(R), bool)
    valid[-3:] = False
    la[-3:] = 50.0
    out = C.classify_ray(R, la, valid, BASIC)
    assert out["Cw"].holds == "yes"


def test_scaling_invariance():
    for la in (np.log(0.56) - R, -np.log(R), np.zeros(len(R))):
        assert verdicts(la) == verdicts(la + np.log(1e-7))


def test_conditions_validate():
    with pytest.raises(C.ConditionError):
        C.SheafCondition("E_M_roumieu")
    with pytest.raises(C.ConditionError):
        C.SheafCondition("Cw", S.make_gevrey(2))
    with pytest.raises(C.ConditionError):
        C.SheafCondition("Dprime_M_roumieu", S.make_gevrey(1))
    with pytest.raises(C.ConditionError):
        C.SheafCondition("bogus")


def test_delta_wavefront(p1, delta0):
    est = C.wavefront(delta0, p1, {"taus": [[-1.0], [0.0], [1.0]]}, BASIC)
    assert est.failing("Cinf") == [((0.0,), (1.0,)), ((0.0,), (-1.0,))]
    assert est.failing("Dprime") == []


def test_heaviside_verdicts(p1):
    mu = F.from_descriptor({"variant": "density", "support": [[0, 2]], "profile": {"kind": "const", "value": 1}})
    est = C.wavefront(mu, p1, {"taus": [[0.0]]}, BASIC)
    for d in range(2):
        assert est.holds(0, d, "Dprime") == "yes"
        assert est.holds(0, d, "Cinf") == "no"
        assert est.holds(0, d, "Cw") == "no"


def test_wedge_one_sided(p1):
    wd = F.from_descriptor({"variant": "wedge", "g": "reciprocal", "V": [[-1, 1]], "y": [0.2]})
    est = C.wavefront(wd, p1, {"taus": [[0.0]]}, BASIC)
    assert est.failing("Cw") == [((0.0,), (1.0,))]
    assert est.extra["height_stability"]["agreement_ratio"] == 1.0


def test_box_endpoints(p1, box1):
    est = C.wavefront(box1, p1, {"taus": [[-1.0], [0.0], [1.0]]}, BASIC)
    bad = {x for x, _ in est.failing("Cinf")}
    assert bad == {(-1.0,), (1.0,)}
    assert est.failing("Dprime") == []


def test_lattice_on_gevrey_conditions(p1, delta0):
    M = S.make_gevrey(2)
    conds = BASIC + [C.SheafCondition(k, M) for k in C.M_KINDS]
    est = C.wavefront(delta0, p1, {"taus": [[0.0], [0.5]]}, conds)
    assert C.lattice_violations(est, [M]) == []
    name = f"E_M_roumieu[{M.label}]"
    assert est.holds(1, 0, name) == "yes" and est.holds(0, 0, name) == "no"


def test_representative_audit(p1, box1):
    gs = {"taus": [[-0.9], [0.0], [0.9]], "jmax": 20}
    edge = F.Combination([(1, box1), (1, F.from_descriptor({"variant": "points", "atoms": [{"x": [1.0]}]}))])
    assert C.representative_invariance_audit(box1, edge, p1, gs)["agree"]
    assert C.representative_invariance_audit(box1, box1, p1, gs)["agree"]
    inner = F.Combination([(1, box1), (1, F.from_descriptor({"variant": "points", "atoms": [{"x": [0.0]}]}))])
    rep = C.representative_invariance_audit(box1, inner, p1, gs)
    assert not rep["agree"]
    assert {d["x"][0] for d in rep["disagreements"]} == {0.0}


def test_decay_check_far_from_carrier(p1, box1):
    rep = C.decay_check(box1, p1, [2.0])
    assert rep["decays"] is True


def test_csv_classify_agrees(p1, delta0):
    from microfbi.transform import SampleGrid, fbi_grid
    g = fbi_grid(delta0, p1, {"taus": [[0.0], [1.0]]})
    a = C.classify_grid(g, BASIC).summary()
    b = C.classify_grid(SampleGrid.from_csv(g.to_csv()), BASIC).summary()
    assert a == b
