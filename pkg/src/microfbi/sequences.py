"""Denjoy-Carleman defining sequences.

Sequences are held as log M_k so that Gevrey entries stay finite well past
k = 170.  Validation reports each defining condition separately and fits
the stability constants (A, H) on a fixed dyadic grid.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

H_GRID = 2.0 ** (np.arange(0, 65) / 8.0)   # 1 .. 256
A_GRID = 2.0 ** (np.arange(0, 161) / 8.0)  # 1 .. 2**20
M4_THRESHOLD = 2.0
K_CAP = 512


class SequenceError(ValueError):
    pass


def log_factorials(kmax):
    return gammaln(np.arange(kmax + 1) + 1.0)


@dataclass(frozen=True)
class ValidationReport:
    p1: bool
    logconvex: bool
    m2prime: bool
    m4: bool
    fitted_A: float
    fitted_H: float
    m4_value: float
    flags: tuple = ()

    @property
    def all_pass(self):
        return self.p1 and self.logconvex and self.m2prime and self.m4

    def to_dict(self):
        return {
            "P1": self.p1,
            "logconvex1": self.logconvex,
            "M2prime": self.m2prime,
            "M4_surrogate": self.m4,
            "fitted_A": self.fitted_A,
            "fitted_H": self.fitted_H,
            "m4_value_at_kmax": self.m4_value,
            "m4_threshold": M4_THRESHOLD,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class RegularSequence:
    """M_0..M_{k_max} stored as logs.

    Gevrey sequences remember their exponent so the associated function can
    read entries beyond k_max without truncating the supremum.
    """
    log_entries: np.ndarray
    report: ValidationReport
    label: str = ""
    gevrey_s: float = None

    @property
    def k_max(self):
        return len(self.log_entries) - 1

    @property
    def entries(self):
        return np.exp(self.log_entries)

    @property
    def fitted_A(self):
        return self.report.fitted_A

    @property
    def fitted_H(self):
        return self.report.fitted_H

    def logs_upto(self, kcap):
        if self.gevrey_s is not None:
            return self.gevrey_s * log_factorials(kcap)
        return self.log_entries[: kcap + 1]

    def associated(self, t, k_cap=K_CAP):
        return associated_value(self, t, k_cap)

    def to_dict(self):
        d = {"label": self.label, "k_max": self.k_max, "report": self.report.to_dict()}
        if self.gevrey_s is not None:
            d["kind"] = "gevrey"
            d["s"] = self.gevrey_s
        else:
            d["kind"] = "explicit"
            d["entries"] = [float(v) for v in self.entries]
        return d


def _check_logs(logM, rtol=1e-12):
    n = len(logM) - 1
    p1 = bool(abs(logM[0]) <= rtol and abs(logM[1]) <= rtol)

    lf = log_factorials(n)
    q = logM - lf
    # (M_k/k!)^2 <= (M_{k-1}/(k-1)!) (M_{k+1}/(k+1)!)
    lhs = 2 * q[1:-1]
    rhs = q[:-2] + q[2:]
    logconvex = bool(np.all(lhs <= rhs + rtol * np.maximum(1.0, np.abs(rhs))))

    # smallest grid H, then smallest grid A, with M_k <= A H^k M_{k-1}
    ks = np.arange(1, n + 1)
    inc = logM[1:] - logM[:-1]
    fitA, fitH, m2 = float("nan"), float("nan"), False
    for H in H_GRID:
        need = np.max(inc - ks * np.log(H))
        ok = np.nonzero(np.log(A_GRID) >= need - 1e-12)[0]
        if len(ok):
            fitA, fitH, m2 = float(A_GRID[ok[0]]), float(H), True
            break

    # (M_k/k!)^{1/k}: increasing on the last quarter and above threshold
    root = np.exp(q[1:] / ks)
    start = max(0, len(root) - max(2, len(root) // 4))
    tail = root[start:]
    m4val = float(root[-1])
    m4 = bool(np.all(np.diff(tail) > 0) and m4val >= M4_THRESHOLD)
    return p1, logconvex, m2, m4, fitA, fitH, m4val


def _report_from_logs(logM):
    p1, lc, m2, m4, A, H, v = _check_logs(logM)
    flags = []
    if not m4:
        flags.append("(M4) fails")
    return ValidationReport(p1, lc, m2, m4, A, H, v, tuple(flags))


def validate_regular(M):
    """Per-condition report for a raw positive list M_0, M_1, ..."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 1 or len(M) < 4:
        raise SequenceError("need at least four entries")
    if np.any(~np.isfinite(M)) or np.any(M <= 0):
        raise SequenceError("entries must be finite and positive")
    return _report_from_logs(np.log(M))


def validate_logs(logM):
    logM = np.asarray(logM, dtype=float)
    if len(logM) < 4:
        raise SequenceError("need at least four entries")
    return _report_from_logs(logM)


def make_gevrey(s, k_max=128):
    if s < 1:
        raise SequenceError("Gevrey exponent must be >= 1 (log-convexity of M_k/k! fails)")
    if k_max < 4:
        raise SequenceError("k_max must be at least 4")
    logM = s * log_factorials(k_max)
    rep = _report_from_logs(logM)
    if s == 1:
        rep = ValidationReport(rep.p1, rep.logconvex, rep.m2prime, rep.m4,
                               rep.fitted_A, rep.fitted_H, rep.m4_value,
                               tuple(sorted(set(rep.flags) | {"(M4) fails", "quasianalytic-analytic"})))
    return RegularSequence(logM, rep, label=f"gevrey(s={s:g})", gevrey_s=float(s))


def from_entries(M, label="explicit"):
    rep = validate_regular(M)
    return RegularSequence(np.log(np.asarray(M, dtype=float)), rep, label=label)


def from_descriptor(d):
    kind = d.get("kind")
    if kind == "gevrey":
        return make_gevrey(float(d["s"]), int(d.get("k_max", 128)))
    if kind == "explicit":
        return from_entries(d["entries"], label=d.get("label", "explicit"))
    raise SequenceError(f"unknown sequence kind {kind!r}")


def _assoc_table(M, t, k_cap):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise SequenceError("t must be positive")
    logs = M.logs_upto(k_cap)
    ks = np.arange(len(logs))
    return np.log(t)[..., None] * ks - logs


def associated_value(M, t, k_cap=K_CAP):
    """M(t) = max over 0 <= k <= k_cap of log(t^k / M_k)."""
    v = _assoc_table(M, t, k_cap).max(axis=-1)
    return float(v) if np.ndim(v) == 0 else v


def associated_maximizer(M, t, k_cap=K_CAP):
    k = _assoc_table(M, t, k_cap).argmax(axis=-1)
    return int(k) if np.ndim(k) == 0 else k


def quasianalytic_test(M, tail_tol=0.1, sum_bound=1e3):
    """Denjoy-Carleman verdict from the terms 1/M_k^{1/k}.

    log of the terms is regressed on u_k = log(k!)/k over the upper half of
    the range; the slope is -s_eff, the Gevrey exponent of M relative to
    the analytic class (exact for Gevrey sequences).  s_eff <= 1 + tail_tol/5
    gives a harmonic minorant, s_eff >= 1 + tail_tol a convergent majorant,
    anything between is inconclusive.
    """
    if M.k_max < 20:
        raise SequenceError("quasianalytic_test needs k_max >= 20")
    ks = np.arange(1, M.k_max + 1)
    terms = np.exp(-M.log_entries[1:] / ks)
    partial = np.cumsum(terms)
    half = ks >= ks[-1] // 2
    u = log_factorials(M.k_max)[1:] / ks
    s_eff = -float(np.polyfit(u[half], np.log(terms[half]), 1)[0])
    if s_eff <= 1.0 + 0.2 * tail_tol or partial[-1] > sum_bound:
        verdict = "quasianalytic"
    elif s_eff >= 1.0 + tail_tol:
        verdict = "non-quasianalytic"
    else:
        verdict = "inconclusive"
    return {"verdict": verdict, "relative_exponent": s_eff,
            "partial_sum": float(partial[-1]), "tail_tol": tail_tol}
