import math

import numpy as np
import pytest

from microfbi import sequences as S


def test_gevrey_two_entries():
    M = S.make_gevrey(2, k_max=4)
    assert np.allclose(M.entries, [1, 1, 4, 36, 576])


def test_gevrey_one_fails_m4():
    M = S.make_gevrey(1, k_max=10)
    assert "(M4) fails" in M.report.flags
    assert not M.report.m4


def test_gevrey_three_halves_all_pass_and_fit():
    M = S.make_gevrey(1.5, k_max=50)
    assert M.report.all_pass
    # brute-force (A, H) scan on the same dyadic grids
    logM = 1.5 * np.array([math.lgamma(k + 1) for k in range(51)])
    found = None
    for H in 2.0 ** (np.arange(0, 65) / 8.0):
        for A in 2.0 ** (np.arange(0, 161) / 8.0):
            if all(logM[k] <= math.log(A) + k * math.log(H) + logM[k - 1] + 1e-12 for k in range(1, 51)):
                found = (A, H)
                break
        if found:
            break
    assert found == (M.fitted_A, M.fitted_H)


def test_validate_regular_examples():
    assert not S.validate_regular([1] * 12).m4
    rep = S.validate_regular([1, 1, 4, 36, 576])
    assert rep.p1 and rep.logconvex and rep.m2prime
    assert not S.validate_regular([1, 2, 8, 48, 384]).p1


def test_validate_rejects_bad_input():
    with pytest.raises(S.SequenceError):
        S.validate_regular([1, 1, -1, 2])
    with pytest.raises(S.SequenceError):
        S.validate_regular([1, 1, 2])
    with pytest.raises(S.SequenceError):
        S.make_gevrey(0.5)


def test_associated_small_t_is_zero():
    assert S.associated_value(S.make_gevrey(2), 0.5) == 0.0


def test_associated_gevrey_two_at_e4():
    M = S.make_gevrey(2)
    # mpmath brute force over k <= 200
    assert S.associated_value(M, math.exp(4)) == pytest.approx(10.9496772778691714, rel=1e-12)
    assert S.associated_maximizer(M, math.exp(4)) == 7


def test_associated_gevrey_one_at_ten():
    M = S.make_gevrey(1)
    assert S.associated_value(M, 10.0) == pytest.approx(7.92143835686494155, rel=1e-12)
    assert S.associated_maximizer(M, 10.0) in (9, 10)
    # Stirling estimate 10 - log(20 pi)/2 within its own error
    assert abs(S.associated_value(M, 10.0) - (10 - 0.5 * math.log(20 * math.pi))) < 0.02


def test_quasianalytic_verdicts():
    assert S.quasianalytic_test(S.make_gevrey(2))["verdict"] == "non-quasianalytic"
    assert S.quasianalytic_test(S.make_gevrey(1))["verdict"] == "quasianalytic"
    assert S.quasianalytic_test(S.from_entries([1.0] * 64))["verdict"] == "quasianalytic"


def test_descriptor_round_trip():
    M = S.from_descriptor({"kind": "gevrey", "s": 2.5})
    assert M.to_dict()["s"] == 2.5
    E = S.from_descriptor({"kind": "explicit", "entries": [1, 1, 4, 36, 576]})
    assert np.allclose(E.entries, [1, 1, 4, 36, 576])
    with pytest.raises(S.SequenceError):
        S.from_descriptor({"kind": "nope"})


def test_log_space_past_170():
    M = S.make_gevrey(2, k_max=300)
    assert np.all(np.isfinite(M.log_entries))
