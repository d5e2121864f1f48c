"""Phase polynomials p and the good phase Psi = c_p exp(-p).

A PhasePolynomial is a real homogeneous polynomial of degree 2k in N
variables.  `certify` samples the unit sphere for the positivity constants,
scans complex cones Gamma_rho for the constants c', C', and computes the
normalization c_p by quadrature.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy as sp
from scipy import integrate

C_FLOOR = 1e-9
RHO_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 10))


class PhaseRejected(ValueError):
    pass


@dataclass(frozen=True)
class PositivityCertificate:
    c: float
    C: float
    rho: float
    c_prime: float
    C_prime: float
    sphere_samples: int
    c_p: float

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("c", "C", "rho", "c_prime", "C_prime", "sphere_samples", "c_p")}


class PhasePolynomial:
    """Homogeneous real polynomial sum a_alpha x^alpha with |alpha| = 2k."""

    def __init__(self, N, k, terms):
        self.N = int(N)
        self.k = int(k)
        clean = {}
        for alpha, coef in terms:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.N:
                raise PhaseRejected(f"multi-index {alpha} has wrong length for N={N}")
            if sum(alpha) != 2 * self.k:
                raise PhaseRejected(f"multi-index {alpha} is not of degree {2 * k}")
            if isinstance(coef, complex) or np.iscomplexobj(coef):
                raise PhaseRejected("coefficients must be real")
            clean[alpha] = clean.get(alpha, 0.0) + float(coef)
        self.terms = tuple(sorted((a, c) for a, c in clean.items() if c != 0.0))
        if not self.terms:
            raise PhaseRejected("degenerate phase: all coefficients vanish")
        self._alphas = np.array([a for a, _ in self.terms])
        self._coefs = np.array([c for _, c in self.terms])
        self.cert = None

    @classmethod
    def from_descriptor(cls, d):
        try:
            return cls(d["N"], d["k"], [(t["alpha"], t["coef"]) for t in d["terms"]])
        except KeyError as exc:
            raise PhaseRejected(f"phase descriptor missing {exc}") from None

    def to_dict(self):
        d = {"N": self.N, "k": self.k,
             "terms": [{"alpha": list(a), "coef": c} for a, c in self.terms]}
        if self.cert is not None:
            d["certificate"] = self.cert.to_dict()
        return d

    @property
    def degree(self):
        return 2 * self.k

    @property
    def lam(self):
        return 1.0 / (2 * self.k)

    def __call__(self, z):
        """Evaluate at points z of shape (..., N); real or complex."""
        z = np.asarray(z)
        if self.N == 1 and (z.ndim == 0 or z.shape[-1] != 1):
            z = z[..., None]
        out = 0
        for alpha, c in self.terms:
            term = c
            for j, a in enumerate(alpha):
                if a:
                    term = term * z[..., j] ** a
            out = out + term
        return out

    def sympy_expr(self, xs):
        return sum(sp.Float(c) * sp.Mul(*[x ** a for x, a in zip(xs, alpha)])
                   for alpha, c in self.terms)

    @cached_property
    def c_p(self):
        if self.cert is not None:
            return self.cert.c_p
        return normalization_constant(self)

    def key(self):
        return (self.N, self.k, self.terms)

    def __repr__(self):
        return f"PhasePolynomial(N={self.N}, k={self.k}, terms={list(self.terms)})"


def square_phase(N=1):
    """Default phase |x|^2."""
    terms = []
    for j in range(N):
        alpha = [0] * N
        alpha[j] = 2
        terms.append((alpha, 1.0))
    return PhasePolynomial(N, 1, terms)


def sphere_points(N, n):
    if N == 1:
        return np.array([[1.0], [-1.0]])
    if N == 2:
        th = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    raise PhaseRejected("only N in {1, 2} is supported")


def validate_positivity(p, n_sphere=None, c_floor=C_FLOOR, max_doublings=6):
    """Sampled extrema c, C of p on the unit sphere.

    The N=2 angular grid doubles until c and C move by less than 1%.
    """
    if n_sphere is None:
        n_sphere = 64 * p.N
    if n_sphere < 64 * p.N:
        raise PhaseRejected(f"n_sphere must be at least {64 * p.N}")
    n = n_sphere
    vals = np.real(p(sphere_points(p.N, n)))
    c, C = vals.min(), vals.max()
    if p.N > 1:
        for _ in range(max_doublings):
            n *= 2
            vals = np.real(p(sphere_points(p.N, n)))
            c2, C2 = vals.min(), vals.max()
            done = abs(c2 - c) <= 0.01 * abs(c2) + c_floor and abs(C2 - C) <= 0.01 * abs(C2)
            c, C = c2, C2
            if done:
                break
    if c <= c_floor:
        raise PhaseRejected(f"not positive-definite on sphere (sampled min {c:.3g})")
    return {"c": float(c), "C": float(C), "samples": int(len(vals))}


def cone_samples(N, rho, n=64):
    """Points of Gamma_rho = {x + iy : |y| <= rho |x|} on the unit sphere."""
    if N == 1:
        sig = np.linspace(-1.0, 1.0, 2 * n + 1)
        pts = []
        for x in (1.0, -1.0):
            pts.append(x + 1j * rho * sig * x)
        z = np.concatenate(pts)[:, None]
    elif N == 2:
        th = 2 * np.pi * np.arange(n) / n
        s = np.linspace(0.0, 1.0, 9)
        ph = 2 * np.pi * np.arange(16) / 16
        T, S, P = np.meshgrid(th, s, ph, indexing="ij")
        xh = np.stack([np.cos(T), np.sin(T)], -1)
        xp = np.stack([-np.sin(T), np.cos(T)], -1)
        y = rho * S[..., None] * (np.cos(P)[..., None] * xh + np.sin(P)[..., None] * xp)
        z = (xh + 1j * y).reshape(-1, 2)
    else:
        raise PhaseRejected("only N in {1, 2} is supported")
    norm = np.sqrt(np.sum(np.abs(z) ** 2, axis=-1))
    return z / norm[:, None]


def cone_constants(p, rho, n=64):
    """min and max of Re p(z)/|z|^{2k} over sampled Gamma_rho."""
    vals = np.real(p(cone_samples(p.N, rho, n)))
    return float(vals.min()), float(vals.max())


def fit_complex_cone(p, rho_grid=RHO_GRID, c_floor=C_FLOOR):
    best = None
    for rho in sorted(rho_grid):
        if not 0 < rho < 1:
            raise PhaseRejected("rho grid values must lie in (0, 1)")
        lo, hi = cone_constants(p, rho)
        if lo > c_floor:
            best = {"rho": float(rho), "c_prime": lo, "C_prime": hi}
    if best is None:
        raise PhaseRejected("no admissible complex cone on the grid")
    return best


def _truncation_radius(p, c):
    # exp(-c R^{2k}) < 1e-16
    return (np.log(1e16) / c) ** (1.0 / (2 * p.k))


def normalization_constant(p, quad_tol=1e-11, c=None):
    if c is None:
        c = validate_positivity(p)["c"]
    R = _truncation_radius(p, c)
    if p.N == 1:
        f = lambda x: np.exp(-p(np.array([x])))
        parts = [integrate.quad(f, a, b, epsabs=0, epsrel=quad_tol, limit=200)
                 for a, b in ((-R, 0.0), (0.0, R))]
        val = sum(v for v, _ in parts)
        err = sum(e for _, e in parts)
    elif p.N == 2:
        f = lambda y, x: np.exp(-p(np.array([x, y])))
        val, err = integrate.dblquad(f, -R, R, -R, R, epsabs=0, epsrel=quad_tol)
    else:
        raise PhaseRejected("only N in {1, 2} is supported")
    if not np.isfinite(val) or err > max(10 * quad_tol, 1e-9) * abs(val):
        raise PhaseRejected("normalization quadrature did not converge")
    return 1.0 / val


def certify(p, n_sphere=None, rho_grid=RHO_GRID, quad_tol=1e-11):
    pos = validate_positivity(p, n_sphere)
    cone = fit_complex_cone(p, rho_grid)
    cp = normalization_constant(p, quad_tol, c=pos["c"])
    p.cert = PositivityCertificate(pos["c"], pos["C"], cone["rho"], cone["c_prime"],
                                   cone["C_prime"], pos["samples"], cp)
    p.__dict__["c_p"] = cp
    return p.cert


def _gauss_box(R, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return R * x, R * w


def _H_value(p, w, t, lam, cp, c):
    """c_p int exp(-p(t^lam (tau - w))) t^{lam N} dtau for complex w."""
    s = t ** lam
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    R = _truncation_radius(p, c)
    if p.N == 1:
        # u = s (tau - Re w); the integral becomes c_p int exp(-p(u - i s Im w)) du
        b = s * w[0].imag
        span = R + 2 * abs(b)
        fr = lambda u: np.real(np.exp(-p(np.array([u - 1j * b]))))
        fi = lambda u: np.imag(np.exp(-p(np.array([u - 1j * b]))))
        kw = dict(epsabs=1e-13, epsrel=1e-12, limit=400)
        re = integrate.quad(fr, -span, span, **kw)[0]
        im = integrate.quad(fi, -span, span, **kw)[0]
        return cp * complex(re, im)
    b = s * w.imag
    span = R + 2 * np.max(np.abs(b))
    u, wt = _gauss_box(span, 400)
    U1, U2 = np.meshgrid(u, u, indexing="ij")
    z = np.stack([U1 - 1j * b[0], U2 - 1j * b[1]], -1)
    return cp * np.sum(np.outer(wt, wt) * np.exp(-p(z)))


def _integrability(p, lam, eps, K, delta, cp, c, n_w=5):
    """sup over sampled w in K_delta of the double integral in Def. 3.1(1)."""
    R = _truncation_radius(p, c)
    Rxi = np.sqrt(np.log(1e16) / eps)
    lo, hi = K
    vs = np.linspace(-delta, delta, n_w)
    best = 0.0
    for v in vs:
        def inner(r):
            b = r ** lam * v
            if p.N == 1:
                g = lambda u: np.exp(-np.real(p(np.array([u - 1j * b]))))
                return cp * integrate.quad(g, -R - 3 * abs(b), R + 3 * abs(b), limit=200)[0]
            u, wt = _gauss_box(R + 3 * abs(b), 120)
            U1, U2 = np.meshgrid(u, u, indexing="ij")
            z = np.stack([U1 - 1j * b, U2 + 0j], -1)
            return cp * np.sum(np.outer(wt, wt) * np.exp(-np.real(p(z))))
        if p.N == 1:
            val = 2 * integrate.quad(lambda r: np.exp(-eps * r * r) * inner(r), 0, Rxi, limit=200)[0]
        else:
            val = 2 * np.pi * integrate.quad(lambda r: r * np.exp(-eps * r * r) * inner(r), 0, Rxi, limit=200)[0]
        best = max(best, val)
    # the real part of w only translates tau, so the bound is uniform over K
    return {"eps": eps, "K": [lo, hi], "delta": delta, "M": float(best)}


def check_good_phase(p, lam=None, w_grid=None, t_grid=(0.5, 1.0, 2.0, 8.0), L=0.5,
                     tol=1e-6, eps=0.1, K=(-1.0, 1.0), delta=0.1, integrability=True):
    """Good-phase checks: integrability bound and the identity H(w) = 1."""
    if lam is None:
        lam = p.lam
    if not 0 < lam < 1.0 / p.k:
        raise PhaseRejected(f"lambda must lie in (0, 1/k) = (0, {1.0 / p.k:g})")
    c = p.cert.c if p.cert is not None else validate_positivity(p)["c"]
    cp = p.c_p
    if w_grid is None:
        re = np.linspace(-1.0, 1.0, 5)
        im = np.linspace(-0.8 * L, 0.8 * L, 5)
        w_grid = [[complex(a, b)] + [complex(0.5 * a, -0.5 * b)] * (p.N - 1)
                  for a in re for b in im]
    rows = []
    worst = 0.0
    for t in t_grid:
        for w in w_grid:
            w = np.atleast_1d(np.asarray(w, dtype=complex))
            if np.max(np.abs(w.imag)) >= L:
                continue
            H = _H_value(p, w, t, lam, cp, c)
            dev = abs(H - 1.0)
            worst = max(worst, dev)
            rows.append({"w": [[float(x.real), float(x.imag)] for x in w], "t": float(t),
                         "H": [float(H.real), float(H.imag)], "deviation": float(dev)})
    rep = {"lambda": lam, "L": L, "tol": tol, "max_deviation": float(worst),
           "normalization_ok": bool(worst <= tol), "rows": rows}
    if integrability:
        rep["integrability"] = _integrability(p, lam, eps, K, delta, cp, c)
    if worst > tol:
        rep["rejected"] = "H deviates from 1 beyond tolerance"
    return rep

