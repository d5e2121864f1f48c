"""Differential operators, symbol calculus, the Neumann parametrix and the
elliptic inclusion audit.

Convention: D_j = -i d/dz_j and the symbol of D^alpha is xi^alpha.  The
composition of symbols is

    (p o q)(z, xi) = sum_gamma i^{-|gamma|} / gamma! (d_xi^gamma p)(d_z^gamma q).

Symbols are exact sympy expressions in z1..zN, xi1..xiN, kept as a map from
homogeneity degree to coefficient.
"""

import itertools
from dataclasses import dataclass
from math import comb, factorial

import mpmath as mp
import numpy as np
import sympy as sp

from .functionals import (Atom, Combination, Density, FunctionalError, PointCombo, Profile,
                          TransposedImage, wsyms)


class OperatorError(ValueError):
    pass


class EllipticityError(ValueError):
    pass


class NotRepresentable(ValueError):
    pass


def zsyms(N):
    return sp.symbols(f"z1:{N + 1}")


def xisyms(N):
    return sp.symbols(f"xi1:{N + 1}")


def _multi(N, order):
    return [a for a in itertools.product(range(order + 1), repeat=N) if sum(a) <= order]


def _mfact(a):
    out = 1
    for v in a:
        out *= factorial(v)
    return out


def _dz(expr, zs, gamma):
    for z, g in zip(zs, gamma):
        if g:
            expr = sp.diff(expr, z, g)
    return expr


def _parse_coef(c, N):
    zs = zsyms(N)
    if isinstance(c, (int, float, complex)):
        return sp.nsimplify(c)
    kind = c.get("kind")
    if kind == "const":
        v = c["value"]
        return sp.nsimplify(complex(*v)) if isinstance(v, list) else sp.nsimplify(v)
    if kind == "poly":
        return sum(sp.nsimplify(m["c"]) * sp.Mul(*[z ** b for z, b in zip(zs, m["beta"])])
                   for m in c["monomials"])
    if kind == "expr":
        loc = {f"x{j + 1}": zs[j] for j in range(N)}
        loc.update({f"z{j + 1}": zs[j] for j in range(N)})
        if N == 1:
            loc["x"] = loc["z"] = zs[0]
        return sp.sympify(c["expr"], locals=loc)
    raise OperatorError(f"unknown coefficient kind {kind!r}")


# ---------------------------------------------------------------- operators

class DifferentialOperator:
    """P(z, D) = sum_alpha a_alpha(z) D^alpha with entire coefficients.

    Terms may be given in the D basis (default) or as partial derivatives,
    d^alpha = i^{|alpha|} D^alpha.
    """

    def __init__(self, N, terms, basis="D", spec=None):
        self.N = int(N)
        zs = zsyms(self.N)
        acc = {}
        for alpha, coef in terms:
            alpha = tuple(int(v) for v in alpha)
            if len(alpha) != self.N or min(alpha) < 0:
                raise OperatorError(f"bad multi-index {alpha}")
            coef = sp.sympify(coef)
            if basis == "partial":
                coef = coef * sp.I ** sum(alpha)
            elif basis != "D":
                raise OperatorError("basis must be 'D' or 'partial'")
            acc[alpha] = sp.expand(acc.get(alpha, 0) + coef)
        self.terms = tuple(sorted(((a, c) for a, c in acc.items() if c != 0), key=lambda t: (-sum(t[0]), t[0])))
        if not self.terms:
            raise OperatorError("operator has no terms")
        if not all(c.free_symbols <= set(zs) for _, c in self.terms):
            raise OperatorError("coefficients may only depend on z1..zN")
        self.m = max(sum(a) for a, _ in self.terms)
        self.spec = spec
        self._zs = zs
        self._xis = xisyms(self.N)

    @classmethod
    def from_descriptor(cls, d):
        N = int(d["N"])
        terms = [(t["alpha"], _parse_coef(t["coef"], N)) for t in d["terms"]]
        P = cls(N, terms, d.get("basis", "D"), spec=d)
        if "m" in d and int(d["m"]) != P.m:
            raise OperatorError(f"declared order {d['m']} differs from max |alpha| = {P.m}")
        return P

    def to_dict(self):
        if self.spec is not None:
            return self.spec
        return {"N": self.N, "m": self.m, "basis": "D",
                "terms": [{"alpha": list(a), "coef": {"kind": "expr", "expr": str(c)}} for a, c in self.terms]}

    def symbol(self):
        return sum(c * sp.Mul(*[x ** v for x, v in zip(self._xis, a)]) for a, c in self.terms)

    def homogeneous_part(self, j):
        return sum((c * sp.Mul(*[x ** v for x, v in zip(self._xis, a)]) for a, c in self.terms
                    if sum(a) == j), sp.Integer(0))

    def principal(self):
        return self.homogeneous_part(self.m)

    def principal_coefficients(self):
        return [c for a, c in self.terms if sum(a) == self.m]

    def as_expansion(self):
        return SymbolExpansion(self.N, {j: self.homogeneous_part(j) for j in range(self.m + 1)
                                        if self.homogeneous_part(j) != 0})

    def apply_to_expr(self, f, syms=None):
        """P f for an expression f in syms (default w1..wN)."""
        syms = syms or wsyms(self.N)
        sub = dict(zip(self._zs, syms))
        out = 0
        for a, c in self.terms:
            g = f
            for s, v in zip(syms, a):
                if v:
                    g = sp.diff(g, s, v)
            out += c.subs(sub) * (-sp.I) ** sum(a) * g
        return sp.expand(out)

    def transpose_table(self):
        """(beta, b_beta) with P^t h = sum_beta b_beta d^beta h, coefficients in w1..wN.

        P^t h = sum_alpha (-D)^alpha (a_alpha h) = sum_alpha i^{|alpha|} d^alpha (a_alpha h).
        """
        ws = wsyms(self.N)
        sub = dict(zip(self._zs, ws))
        tab = {}
        for a, c in self.terms:
            for beta in itertools.product(*[range(v + 1) for v in a]):
                rest = tuple(x - y for x, y in zip(a, beta))
                k = sp.Mul(*[comb(x, y) for x, y in zip(a, beta)])
                tab[beta] = tab.get(beta, 0) + sp.I ** sum(a) * k * _dz(c, self._zs, rest)
        return tuple((b, sp.expand(v.subs(sub))) for b, v in sorted(tab.items()) if sp.expand(v) != 0)


def principal_symbol(P, x, xi):
    """p_m(x, xi) = sum_{|alpha| = m} a_alpha(x) xi^alpha."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    if np.linalg.norm(xi) == 0:
        raise OperatorError("principal symbol needs xi != 0")
    x = np.atleast_1d(np.asarray(x, dtype=complex))
    expr = P.principal().subs(dict(zip(P._zs, x))).subs(dict(zip(P._xis, xi)))
    return complex(sp.N(expr))


def _principal_fn(P):
    f = sp.lambdify((*P._zs, *P._xis), P.principal(), "numpy")
    cs = [sp.lambdify(P._zs, c, "numpy") for c in P.principal_coefficients()]
    return f, cs


def char_set_sample(P, x_grid, sphere_grid, tol=1e-8):
    """(x, theta) pairs with |p_m(x, theta)| / |coefficients at x| < tol.

    The normalization makes the sampled set invariant under multiplying P by
    a nonvanishing function.
    """
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    sphere = np.atleast_2d(np.asarray(sphere_grid, dtype=float))
    if x_grid.size == 0 or sphere.size == 0:
        raise OperatorError("grids must be nonempty")
    f, cs = _principal_fn(P)
    out = []
    for x in x_grid:
        scale = np.sqrt(sum(abs(complex(np.broadcast_to(c(*x), ()))) ** 2 for c in cs))
        if scale == 0:
            out += [(tuple(x), tuple(t)) for t in sphere]
            continue
        th = sphere / np.linalg.norm(sphere, axis=1, keepdims=True)
        vals = np.abs(np.broadcast_to(f(*x, *th.T), (len(th),))) / scale
        out += [(tuple(map(float, x)), tuple(map(float, t))) for t, v in zip(th, vals) if v < tol]
    return out


def sphere_grid(N, n=64):
    if N == 1:
        return np.array([[1.0], [-1.0]])
    a = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(a), np.sin(a)], 1)


# ---------------------------------------------------------------- symbols

class SymbolExpansion:
    """sum_d q_d(z, xi) with q_d positively homogeneous of degree d in xi."""

    def __init__(self, N, terms, J=None):
        self.N = N
        self.zs, self.xis = zsyms(N), xisyms(N)
        clean = {}
        for d, e in dict(terms).items():
            e = sp.cancel(sp.together(sp.sympify(e)))
            if e != 0:
                clean[int(d)] = e
        self.terms = dict(sorted(clean.items(), reverse=True))
        self.J = J

    @property
    def degrees(self):
        return list(self.terms)

    def top(self):
        return max(self.terms) if self.terms else None

    def is_zero(self):
        return not self.terms

    def expr(self):
        return sum(self.terms.values(), sp.Integer(0))

    def truncate(self, lowest):
        return SymbolExpansion(self.N, {d: e for d, e in self.terms.items() if d >= lowest}, self.J)

    def __add__(self, other):
        acc = dict(self.terms)
        for d, e in other.terms.items():
            acc[d] = acc.get(d, 0) + e
        return SymbolExpansion(self.N, acc)

    def scale(self, c):
        return SymbolExpansion(self.N, {d: c * e for d, e in self.terms.items()}, self.J)

    def __sub__(self, other):
        return self + other.scale(-1)

    def evaluate(self, z, xi, dps=30):
        """Sum of the terms at (z, xi), evaluated in mpmath at dps digits."""
        return complex(sum(self.evaluate_terms(z, xi, dps).values(), mp.mpc(0)))

    def evaluate_terms(self, z, xi, dps=30):
        z = np.atleast_1d(z)
        xi = np.atleast_1d(xi)
        with mp.workdps(dps):
            out = {}
            for d, e in self.terms.items():
                f = sp.lambdify((*self.zs, *self.xis), e, "mpmath")
                out[d] = mp.mpc(f(*[mp.mpc(complex(v)) for v in z], *[mp.mpc(complex(v)) for v in xi]))
            return out

    def homogeneity_error(self, z, rays, lams=(2.0, 7.5)):
        """max relative error of q_d(z, lam xi) = lam^d q_d(z, xi) over rays."""
        worst = 0.0
        for d, e in self.terms.items():
            f = sp.lambdify((*self.zs, *self.xis), e, "numpy")
            for th in np.atleast_2d(rays):
                base = complex(f(*np.atleast_1d(z), *th))
                for lam in lams:
                    v = complex(f(*np.atleast_1d(z), *(lam * th)))
                    ref = lam ** d * base
                    if ref != 0 or v != 0:
                        worst = max(worst, abs(v - ref) / max(abs(ref), 1e-300))
        return worst

    def to_dict(self):
        return {"N": self.N, "J": self.J, "terms": [{"degree": d, "expr": str(e)} for d, e in self.terms.items()]}


def compose_symbols(p, q, J=None):
    """Truncated composition p o q, keeping degrees >= top(p) + top(q) - J.

    With J = None the sum runs over |gamma| <= max xi-degree of p when p is
    polynomial in xi (then the composition is exact).
    """
    if p.N != q.N:
        raise OperatorError("dimension mismatch")
    N = p.N
    if p.is_zero() or q.is_zero():
        return SymbolExpansion(N, {}, J)
    top = p.top() + q.top()
    if J is None:
        if not all(e.is_polynomial(*p.xis) for e in p.terms.values()):
            raise OperatorError("exact composition needs p polynomial in xi; give J")
        order = max(sp.Poly(e, *p.xis).total_degree() for e in p.terms.values())
        lowest = None
    else:
        order = J
        lowest = top - J
    acc = {}
    for gamma in _multi(N, order):
        g = sum(gamma)
        c = sp.I ** (-g) / _mfact(gamma)
        for dp, ep in p.terms.items():
            dxi = _dz(ep, p.xis, gamma)
            if dxi == 0:
                continue
            for dq, eq in q.terms.items():
                deg = dp + dq - g
                if lowest is not None and deg < lowest:
                    continue
                dzq = _dz(eq, q.zs, gamma)
                if dzq == 0:
                    continue
                acc[deg] = acc.get(deg, 0) + c * dxi * dzq
    return SymbolExpansion(N, acc, J)


def compose_symbols_numeric(p, q, J, z, xi, dps=30):
    """Oracle for compose_symbols: the same sum with z-derivatives taken numerically.

    Only the first route's xi-derivatives are reused (they are polynomial
    bookkeeping); the z-derivatives of q come from mpmath's numerical
    differentiation of the lambdified coefficient.
    """
    N = p.N
    z = [complex(v) for v in np.atleast_1d(z)]
    xi = [complex(v) for v in np.atleast_1d(xi)]
    top = p.top() + q.top()
    lowest = top - J
    total = mp.mpc(0)
    with mp.workdps(dps):
        for gamma in _multi(N, J):
            g = sum(gamma)
            c = mp.mpc(0, -1) ** g / _mfact(gamma)
            for dp, ep in p.terms.items():
                dxi = _dz(ep, p.xis, gamma)
                if dxi == 0:
                    continue
                fp = sp.lambdify((*p.zs, *p.xis), dxi, "mpmath")
                vp = fp(*map(mp.mpc, z), *map(mp.mpc, xi))
                for dq, eq in q.terms.items():
                    if dp + dq - g < lowest:
                        continue
                    fq = sp.lambdify((*q.zs, *q.xis), eq, "mpmath")
                    vq = mp.diff(lambda *zz: fq(*zz, *map(mp.mpc, xi)), tuple(map(mp.mpc, z)), gamma) \
                        if N > 1 else mp.diff(lambda zz: fq(zz, *map(mp.mpc, xi)), mp.mpc(z[0]), gamma[0])
                    total += c * vp * vq
        return complex(total)


# ---------------------------------------------------------------- parametrix

def remainder_formula(P):
    """r = sum_alpha a_alpha sum_{beta <= alpha, |alpha - beta| != m} (1/beta!) d_xi^beta xi^alpha D_z^beta (1/p_m)."""
    N, m = P.N, P.m
    pm_inv = 1 / P.principal()
    acc = {}
    for a, c in P.terms:
        mono = sp.Mul(*[x ** v for x, v in zip(P._xis, a)])
        for beta in itertools.product(*[range(v + 1) for v in a]):
            if sum(a) - sum(beta) == m:
                continue
            dxi = _dz(mono, P._xis, beta)
            Dz = (-sp.I) ** sum(beta) * _dz(pm_inv, P._zs, beta)
            if Dz == 0:
                continue
            deg = sum(a) - sum(beta) - m
            acc[deg] = acc.get(deg, 0) + c * dxi * Dz / _mfact(beta)
    return SymbolExpansion(N, acc)


def remainder_by_composition(P):
    """r = p o p_m^{-1} - 1, with the (finite) exact composition."""
    pm_inv = SymbolExpansion(P.N, {-P.m: 1 / P.principal()})
    return compose_symbols(P.as_expansion(), pm_inv) - SymbolExpansion(P.N, {0: 1})


def _cone_rays(N, cone):
    if cone is None:
        return sphere_grid(N, 16)
    return np.atleast_2d(np.asarray(cone, dtype=float))


def parametrix(P, J, cone=None, box=None, z0=None, radii=None, J_max=6):
    """a_J = p_m^{-1} o sum_{j <= J} (-1)^j r^{oj} and the probe |p o a_J - 1| along rays.

    cone is an array of unit directions (default: a sphere sample), box a
    list of intervals on which ellipticity is checked.  The probe is taken
    at z0 (default: the centre of box) for radii in [64, 4096].
    """
    if not 0 <= J <= J_max:
        raise OperatorError(f"J must lie in [0, {J_max}]")
    N, m = P.N, P.m
    rays = _cone_rays(N, cone)
    box = box if box is not None else [[-1.0, 1.0]] * N
    xs = np.stack(np.meshgrid(*[np.linspace(a, b, 9) for a, b in box], indexing="ij"), -1).reshape(-1, N)
    bad = char_set_sample(P, xs, rays, tol=1e-8)
    if bad:
        raise EllipticityError(f"P is characteristic at {bad[0]}")
    r = remainder_formula(P)
    r_check = remainder_by_composition(P)
    diff = r - r_check
    r_agree = diff.is_zero() or all(sp.simplify(e) == 0 for e in diff.terms.values())
    one = SymbolExpansion(N, {0: 1})
    lowest = -J - 1
    S, power = one, one
    for j in range(1, J + 1):
        power = compose_symbols(r, power, J + 1).truncate(lowest)
        S = S + power.scale((-1) ** j)
    pm_inv = SymbolExpansion(N, {-m: 1 / P.principal()})
    a = compose_symbols(pm_inv, S, J + 1).truncate(-m + lowest)
    a.J = J
    s = compose_symbols(P.as_expansion(), a) - one
    s = SymbolExpansion(N, {d: sp.simplify(e) for d, e in s.terms.items()})
    z0 = np.array([0.5 * (lo + hi) for lo, hi in box]) if z0 is None else np.atleast_1d(z0)
    radii = np.geomspace(64, 4096, 13) if radii is None else np.asarray(radii, float)
    probe = []
    for th in rays:
        vals = [abs(s.evaluate(z0, rr * th, dps=40)) for rr in radii]
        probe.append(vals)
    probe = np.array(probe)
    slopes = []
    for vals in probe:
        ok = vals > 0
        slopes.append(float(np.polyfit(np.log(radii[ok]), np.log(vals[ok]), 1)[0]) if ok.sum() >= 2 else -np.inf)
    return {"a_J": a, "r": r, "r_agree": bool(r_agree), "remainder": s, "J": J, "z0": z0.tolist(),
            "radii": radii.tolist(), "rays": rays.tolist(), "probe": probe.tolist(),
            "probe_max": float(np.max(probe)), "slopes": slopes,
            "slope": float(max(slopes)) if slopes else -np.inf}


# ---------------------------------------------------------------- P mu

def apply_operator(P, mu, route="transpose"):
    """P mu as an analytic functional, h -> mu(P^t h).

    route="transpose" wraps mu; route="explicit" builds P mu by hand:
    point atoms are expanded (N any), densities (N = 1) are differentiated
    in the interior and integration-by-parts terms become atoms at the
    ends of the support.
    """
    if route == "transpose":
        return TransposedImage(mu, P.transpose_table(), label=_label(P))
    if route != "explicit":
        raise OperatorError("route must be 'transpose' or 'explicit'")
    if isinstance(mu, Combination):
        return Combination([(a, apply_operator(P, nu, "explicit")) for a, nu in mu.parts])
    if isinstance(mu, PointCombo):
        return _points_image(P, mu)
    if isinstance(mu, Density) and mu.N == 1 and type(mu.profile) is Profile:
        return _density_image(P, mu)
    raise NotRepresentable(f"no explicit image of {type(mu).__name__} under P")


def _label(P):
    return " + ".join(f"({c})D^{list(a)}" for a, c in P.terms)


def _points_image(P, mu):
    ws = wsyms(P.N)
    tab = P.transpose_table()
    atoms = {}
    for at in mu.atoms:
        x = dict(zip(ws, at.x))
        for beta, b in tab:
            # d^alpha (b d^beta h) = sum_g C(alpha, g) d^{alpha-g} b  d^{beta+g} h
            for g in itertools.product(*[range(v + 1) for v in at.alpha]):
                k = sp.Mul(*[comb(v, u) for v, u in zip(at.alpha, g)])
                db = _dz(b, ws, tuple(v - u for v, u in zip(at.alpha, g)))
                c = complex(sp.N(k * db.subs(x))) * at.c
                if c != 0:
                    key = (at.x, tuple(u + v for u, v in zip(beta, g)))
                    atoms[key] = atoms.get(key, 0) + c
    clean = [Atom(x, al, c) for (x, al), c in atoms.items() if abs(c) > 0]
    cap = max(sum(a.alpha) for a in clean)
    return PointCombo(clean, carrier=mu.carrier, order_cap=max(cap, mu.order_cap))


def _density_image(P, mu):
    """int_a^b f P^t h = int_a^b (P f) h + boundary atoms (N = 1)."""
    (a, b), = mu.support.intervals
    w, = wsyms(1)
    f = mu.profile.expr
    atoms = {}
    for (k,), c in P.terms:
        cw = c.subs(P._zs[0], w)
        # int f i^k d^k (c h) = i^k [sum_j (-1)^j f^(j) d^{k-1-j}(c h)]_a^b + int (c D^k f) h
        for j in range(k):
            fj = sp.diff(f, w, j)
            n = k - 1 - j
            for g in range(n + 1):
                coef = sp.I ** k * (-1) ** j * comb(n, g) * fj * sp.diff(cw, w, n - g)
                for x, sgn in ((b, 1), (a, -1)):
                    v = complex(sp.N(sgn * coef.subs(w, x)))
                    if v != 0:
                        atoms[((float(x),), (g,))] = atoms.get(((float(x),), (g,)), 0) + v
    parts = []
    Pf = sp.simplify(P.apply_to_expr(f))
    if Pf != 0:
        parts.append((1.0, Density(mu.support, Profile(Pf, 1, "expr", {"kind": "expr", "expr": str(Pf)}))))
    clean = [Atom(x, al, c) for (x, al), c in atoms.items() if abs(c) > 1e-15]
    if clean:
        cap = max(sum(t.alpha) for t in clean)
        parts.append((1.0, PointCombo(clean, carrier=mu.support, order_cap=max(cap, 2))))
    if not parts:
        return PointCombo([Atom((float(a),), (0,), 0j)], carrier=mu.support)
    return parts[0][1] if len(parts) == 1 else Combination(parts)


# ---------------------------------------------------------------- audit

@dataclass
class InclusionReport:
    condition: str
    violations: list
    char_explained: list
    image_explained: int
    inconclusive: list
    skipped: bool = False
    reason: str = ""

    @property
    def consistent(self):
        return not self.skipped and not self.violations

    def to_dict(self):
        return {"condition": self.condition, "consistent": self.consistent, "skipped": self.skipped,
                "reason": self.reason, "violations": self.violations, "char_explained": self.char_explained,
                "image_explained": self.image_explained, "inconclusive": self.inconclusive}


def _near_char(P, x, theta, char_dirs, ang_tol, tol):
    f, cs = _principal_fn(P)
    scale = np.sqrt(sum(abs(complex(np.broadcast_to(c(*x), ()))) ** 2 for c in cs))
    th = np.asarray(theta, float)
    if scale == 0 or abs(complex(np.broadcast_to(f(*x, *th), ()))) / scale < tol:
        return True
    for t in char_dirs:
        if np.arccos(np.clip(np.dot(t, th), -1, 1)) <= ang_tol:
            return True
    return False


def elliptic_wf_audit(P, mu, p, grid_spec=None, conditions=None, caps=None, threads=1,
                      route="transpose", ang_tol=None, char_tol=1e-8, sphere_n=720):
    """Check WF(mu) within WF(P mu) united with Char P, covector by covector.

    A covector where mu fails a condition but P mu satisfies it is a
    violation unless it lies within ang_tol of Char P.  Returns one
    InclusionReport per condition plus the two estimates.
    """
    from .classify import wavefront
    try:
        Pmu = apply_operator(P, mu, route)
    except NotRepresentable as e:
        return {"reports": [InclusionReport("all", [], [], 0, [], True, str(e))], "skipped": True}
    est_mu = wavefront(mu, p, grid_spec, conditions, caps, threads)
    est_P = wavefront(Pmu, p, grid_spec, conditions, caps, threads)
    sph = sphere_grid(P.N, sphere_n)
    if ang_tol is None:
        ang_tol = np.deg2rad(10.0) if P.N == 2 else 0.0
    reports = []
    for c in est_mu.conditions:
        from .classify import NO, YES, INC
        viol, expl, inc = [], [], []
        img = 0
        for (b, d), v in sorted(est_mu.verdicts.items()):
            if v[c.name].holds != NO:
                continue
            x = est_mu.base_points[b]
            th = est_mu.directions[d]
            cov = {"x": list(map(float, x)), "theta": list(map(float, th))}
            hp = est_P.verdicts[(b, d)][c.name].holds
            if hp == NO:
                img += 1
                continue
            char_dirs = [np.array(t) for _, t in char_set_sample(P, [x], sph, char_tol)]
            if _near_char(P, x, th, char_dirs, ang_tol, char_tol):
                expl.append(cov)
            elif hp == INC:
                inc.append(cov)
            else:
                viol.append(cov)
        reports.append(InclusionReport(c.name, viol, expl, img, inc))
    return {"reports": reports, "skipped": False, "estimate": est_mu, "image_estimate": est_P,
            "image": Pmu, "ang_tol": ang_tol}
