"""Directional decay fits and regularity verdicts.

Every condition is decided on one sample ray (r_i, log|F|_i).  Universal
quantifiers are replaced by finite grids (caps are recorded in each verdict)
and fits use the upper half of the radius range.

Raw tests are closed upward along the implications

    C^w => E^(M) => E^M => C^inf => D' => D'^M => D'^(M)

so that a verdict set is always consistent; the raw outcomes are reported
next to the closed ones.
"""

from dataclasses import dataclass, field

import numpy as np

from .sequences import associated_value, quasianalytic_test
from .transform import fbi_grid, fbi_scaled

KINDS = ("Cw", "Cinf", "E_M_roumieu", "E_M_beurling", "Dprime", "Dprime_M_roumieu",
         "Dprime_M_beurling")
M_KINDS = ("E_M_roumieu", "E_M_beurling", "Dprime_M_roumieu", "Dprime_M_beurling")
YES, NO, INC = "yes", "no", "inconclusive"


class ConditionError(ValueError):
    pass


@dataclass
class Caps:
    c2_min: float = 1e-3
    q_max: float = 8.0
    q_cap: float = 12.0
    rel_residual: float = 0.05
    grid_exponents: tuple = tuple(range(9))    # c, rho, L in {2^-j}
    min_samples: int = 8
    min_ratio: float = 16.0
    bound_tol: float = 1e-6
    window: str = "upper-half"

    def grid(self):
        return [2.0 ** -j for j in self.grid_exponents]

    def to_dict(self):
        return {"c2_min": self.c2_min, "q_max": self.q_max, "q_cap": self.q_cap,
                "rel_residual": self.rel_residual,
                "parameter_grid": [f"2^-{j}" for j in self.grid_exponents],
                "min_samples": self.min_samples, "min_ratio": self.min_ratio,
                "bound_tol": self.bound_tol, "window": self.window}


@dataclass(frozen=True)
class SheafCondition:
    kind: str
    sequence: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConditionError(f"unknown condition {self.kind!r}")
        needs = self.kind in M_KINDS
        if needs and self.sequence is None:
            raise ConditionError(f"{self.kind} needs a defining sequence")
        if not needs and self.sequence is not None:
            raise ConditionError(f"{self.kind} takes no sequence")
        if self.kind.startswith("Dprime_M"):
            qa = quasianalytic_test(self.sequence)["verdict"]
            if qa != "non-quasianalytic":
                raise ConditionError(f"{self.kind} needs a non-quasianalytic sequence (test says {qa})")

    @property
    def name(self):
        if self.sequence is None:
            return self.kind
        return f"{self.kind}[{self.sequence.label}]"


@dataclass
class RegularityVerdict:
    covector: tuple
    condition: SheafCondition
    holds: str
    raw: str
    fit: dict
    caps: dict

    def to_dict(self):
        return {"covector": {"x": list(self.covector[0]), "theta": list(self.covector[1])},
                "condition": self.condition.name, "holds": self.holds, "raw": self.raw,
                "fit": self.fit, "caps": self.caps}


# ---------------------------------------------------------------- fits

def _window(r, la, valid, caps):
    ok = np.asarray(valid, bool) & np.isfinite(la)
    r, la = np.asarray(r, float)[ok], np.asarray(la, float)[ok]
    if len(r) < caps.min_samples or r[-1] / r[0] < caps.min_ratio:
        return None
    lo = np.sqrt(r[0] * r[-1])
    sel = r >= lo * (1 - 1e-12)
    return r, la, sel


def _linfit(x, y):
    A = np.stack([np.ones_like(x), x], 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    rms = float(np.sqrt(np.mean(res ** 2)))
    spread = float(np.max(y) - np.min(y))
    return coef, rms, spread


def exponential_fit(r, la):
    """log|F| = log c1 - c2 r."""
    coef, rms, spread = _linfit(r, la)
    rel = rms / spread if spread > 0 else 0.0
    return {"model": "exponential", "log_c1": float(coef[0]), "c2": float(-coef[1]),
            "residual_rms": rms, "relative_residual": rel}


def power_fit(r, la):
    """log|F| = log C + slope log r."""
    coef, rms, spread = _linfit(np.log(r), la)
    return {"model": "power", "log_C": float(coef[0]), "slope": float(coef[1]), "q": float(-coef[1]),
            "residual_rms": rms}


def _bounded_above(g, caps):
    """sup of g over the upper half of the window stays below the lower half's sup."""
    n = len(g)
    half = n // 2
    return bool(np.max(g[half:]) <= np.max(g[:half + 1]) + caps.bound_tol * (1 + np.max(np.abs(g))))


def _m_tests(r, la, seq, caps):
    grid = caps.grid()
    out = {}
    pos = [_bounded_above(la + associated_value(seq, c * r), caps) for c in grid]
    neg = [_bounded_above(la - associated_value(seq, c * r), caps) for c in grid]
    ok_pos = [c for c, ok in zip(grid, pos) if ok]
    ok_neg = [c for c, ok in zip(grid, neg) if ok]
    out["E_M_roumieu"] = (bool(ok_pos), {"model": "associated", "sign": "decay", "c_passing": ok_pos})
    out["E_M_beurling"] = (all(pos), {"model": "associated", "sign": "decay", "rho_passing": ok_pos})
    out["Dprime_M_roumieu"] = (all(neg), {"model": "associated", "sign": "growth", "L_passing": ok_neg})
    out["Dprime_M_beurling"] = (bool(ok_neg), {"model": "associated", "sign": "growth", "c_passing": ok_neg})
    return out


def _or(*v):
    if YES in v:
        return YES
    if INC in v:
        return INC
    return NO


def _and(*v):
    if NO in v:
        return NO
    if INC in v:
        return INC
    return YES


def _yn(b):
    return YES if b else NO


def classify_ray(r, log_abs, valid, conditions, caps=None, covector=((), ())):
    """Verdicts for all requested conditions on one ray, lattice-closed."""
    caps = caps or Caps()
    conditions = list(conditions)
    w = _window(r, log_abs, valid, caps)
    capd = caps.to_dict()
    if w is None:
        fit = {"reason": "too few valid samples or radius ratio too small"}
        return {c.name: RegularityVerdict(covector, c, INC, INC, fit, capd) for c in conditions}
    rr, la, sel = w
    rw, lw = rr[sel], la[sel]
    rng = [float(rw[0]), float(rw[-1])]
    ef = exponential_fit(rw, lw)
    pf = power_fit(rw, lw)
    ef["r_range"] = pf["r_range"] = rng
    exp_raw = (ef["c2"] >= caps.c2_min and ef["relative_residual"] <= caps.rel_residual
               and ef["residual_rms"] <= pf["residual_rms"])
    raw = {"Cw": _yn(exp_raw), "Cinf": _yn(pf["slope"] <= -caps.q_max),
           "Dprime": _yn(pf["slope"] <= caps.q_cap)}
    fits = {"Cw": ef, "Cinf": pf, "Dprime": pf}
    cw = raw["Cw"]
    cinf = _or(raw["Cinf"], cw)
    dp = _or(raw["Dprime"], cinf)
    closed = {"Cw": cw, "Cinf": cinf, "Dprime": dp}
    for c in conditions:
        if c.kind in M_KINDS:
            tests = _m_tests(rw, lw, c.sequence, caps)
            traw = {k: _yn(v[0]) for k, v in tests.items()}
            eb = _and(_or(traw["E_M_beurling"], cw), cinf)
            er = _and(_or(traw["E_M_roumieu"], eb), cinf)
            dr = _or(traw["Dprime_M_roumieu"], dp)
            db = _or(traw["Dprime_M_beurling"], dr)
            vals = {"E_M_beurling": eb, "E_M_roumieu": er, "Dprime_M_roumieu": dr,
                    "Dprime_M_beurling": db}
            raw[c.name] = traw[c.kind]
            closed[c.name] = vals[c.kind]
            fits[c.name] = dict(tests[c.kind][1], r_range=rng, sequence=c.sequence.label)
    out = {}
    for c in conditions:
        key = c.name if c.kind in M_KINDS else c.kind
        out[c.name] = RegularityVerdict(covector, c, closed[key], raw[key], fits[key], capd)
    return out


def classify_direction(samples, condition, caps=None, covector=((), ())):
    """samples: (radii, log|F|) or (radii, log|F|, valid)."""
    if len(samples) == 2:
        r, la = samples
        valid = np.isfinite(la)
    else:
        r, la, valid = samples
    return classify_ray(r, la, valid, [condition], caps, covector)[condition.name]


# ---------------------------------------------------------------- wave-front sets

@dataclass
class WavefrontEstimate:
    base_points: np.ndarray
    directions: np.ndarray
    conditions: list
    verdicts: dict          # (b, d) -> {condition name: RegularityVerdict}
    caps: dict
    extra: dict = field(default_factory=dict)

    def holds(self, b, d, name):
        return self.verdicts[(b, d)][name].holds

    def failing(self, name):
        return [(tuple(self.base_points[b]), tuple(self.directions[d]))
                for (b, d), v in sorted(self.verdicts.items()) if v[name].holds == NO]

    def inconclusive(self, name):
        return [(tuple(self.base_points[b]), tuple(self.directions[d]))
                for (b, d), v in sorted(self.verdicts.items()) if v[name].holds == INC]

    def summary(self):
        out = {}
        for c in self.conditions:
            fail = self.failing(c.name)
            inc = self.inconclusive(c.name)
            out[c.name] = {
                "wf_estimate": [{"x": list(map(float, x)), "theta": list(map(float, t))} for x, t in fail],
                "inconclusive": [{"x": list(map(float, x)), "theta": list(map(float, t))} for x, t in inc],
                "empty_wf_global_regularity": (not fail and not inc),
            }
        return out

    def rows(self):
        """Plot-ready rows (x..., theta..., condition, holds)."""
        out = []
        for (b, d), v in sorted(self.verdicts.items()):
            for c in self.conditions:
                out.append((*map(float, self.base_points[b]), *map(float, self.directions[d]),
                            c.name, v[c.name].holds))
        return out

    def to_dict(self):
        return {"conditions": [c.name for c in self.conditions], "caps": self.caps,
                "verdicts": [v.to_dict() for k in sorted(self.verdicts) for v in self.verdicts[k].values()],
                "summary": self.summary(), **self.extra}


def classify_grid(grid, conditions, caps=None):
    caps = caps or Caps()
    verdicts = {}
    for b in range(len(grid.base_points)):
        for d in range(len(grid.directions)):
            cov = (tuple(map(float, grid.base_points[b])), tuple(map(float, grid.directions[d])))
            r, la, valid = grid.ray(b, d)
            verdicts[(b, d)] = classify_ray(r, la, valid, conditions, caps, cov)
    return WavefrontEstimate(grid.base_points, grid.directions, list(conditions), verdicts, caps.to_dict())


def wavefront(mu, p, grid_spec=None, conditions=None, caps=None, threads=1, grid=None):
    """Sample F_p mu and classify every covector of the grid.

    Wedge functionals are classified at heights y and y/2 as well; the
    agreement of the two verdict sets is reported as `height_stability`.
    """
    if conditions is None:
        conditions = [SheafCondition(k) for k in ("Cw", "Cinf", "Dprime")]
    if grid is None:
        grid = fbi_grid(mu, p, grid_spec, threads=threads)
    est = classify_grid(grid, conditions, caps)
    est.extra["invalid_cells"] = int(np.sum(~grid.valid))
    if hasattr(mu, "with_height"):
        half = mu.with_height(mu.y / 2)
        g2 = fbi_grid(half, p, grid_spec, threads=threads)
        e2 = classify_grid(g2, conditions, caps)
        same = total = 0
        for k, v in est.verdicts.items():
            for name, ver in v.items():
                total += 1
                same += ver.holds == e2.verdicts[k][name].holds
        est.extra["height_stability"] = {"heights": [mu.y.tolist(), (mu.y / 2).tolist()],
                                         "agreement_ratio": same / total if total else 1.0}
    est.grid = grid
    return est


def lattice_violations(est, sequences=()):
    """Count implications A => B broken by conclusive verdicts on each covector."""
    chains = [("Cw", "Cinf"), ("Cinf", "Dprime")]
    for s in sequences:
        lab = s.label
        eb, er = f"E_M_beurling[{lab}]", f"E_M_roumieu[{lab}]"
        dr, db = f"Dprime_M_roumieu[{lab}]", f"Dprime_M_beurling[{lab}]"
        chains += [("Cw", er), (er, "Cinf"), (eb, er), ("Dprime", dr), (dr, db)]
    bad = []
    for k, v in est.verdicts.items():
        for a, b in chains:
            if a in v and b in v and v[a].holds == YES and v[b].holds == NO:
                bad.append({"cell": list(k), "from": a, "to": b})
    return bad


# ---------------------------------------------------------------- audits

def decay_check(mu, p, tau, radii=None, n_dir=8, caps=None):
    """Exponential decay of F_p mu(tau, .) in every sampled direction."""
    N = p.N
    caps = caps or Caps()
    if radii is None:
        radii = 2.0 ** (np.arange(0, 21) / 2.0) if N == 1 else 2.0 ** (np.arange(0, 17) / 2.0)
    from .transform import directions
    dirs = directions(N, n_dir)
    cond = SheafCondition("Cw")
    rates, verdicts = [], []
    for th in dirs:
        vals = [fbi_scaled(mu, p, tau, r * th) for r in radii]
        if all(v.note == "zero" for v in vals):
            verdicts.append(YES)
            rates.append(float("inf"))
            continue
        la = np.array([v.log_abs for v in vals])
        ok = np.array([v.valid for v in vals])
        ver = classify_direction((np.asarray(radii), la, ok), cond, caps)
        verdicts.append(ver.holds)
        rates.append(ver.fit.get("c2", float("nan")))
    if all(v == YES for v in verdicts):
        dec = True
    elif NO in verdicts:
        dec = False
    else:
        dec = "inconclusive"
    return {"decays": dec, "rates": rates, "verdicts": verdicts}


def representative_invariance_audit(mu1, mu2, p, grid_spec=None, conditions=None, caps=None,
                                    margin=0.1, threads=1):
    """Compare verdicts of two representatives on interior covectors."""
    e1 = wavefront(mu1, p, grid_spec, conditions, caps, threads)
    e2 = wavefront(mu2, p, grid_spec, conditions, caps, threads)
    box = mu1.carrier.hull(mu2.carrier)
    dis = []
    checked = 0
    for (b, d), v in sorted(e1.verdicts.items()):
        x = e1.base_points[b]
        if box.boundary_distance(x) < margin:
            continue
        for name, ver in v.items():
            checked += 1
            other = e2.verdicts[(b, d)][name].holds
            if ver.holds != other:
                dis.append({"x": list(map(float, x)), "theta": list(map(float, e1.directions[d])),
                            "condition": name, "mu1": ver.holds, "mu2": other})
    return {"agree": not dis, "checked": checked, "disagreements": dis, "margin": margin}

