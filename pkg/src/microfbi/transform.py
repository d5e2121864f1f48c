"""The FBI transform F_p mu(tau, xi) and the inversion formula.

With lambda = 1/(2k) the kernel is exp(phi) where

    phi(w) = i (tau - w).xi - |xi| p(tau - w) = r psi(w),   xi = r theta,

so Re phi scales linearly in r.  Densities and wedge values are integrated
along a contour moved into the complex w-domain by -h theta (h picked to
minimize max Re psi on the path), which turns the oscillatory integral into
a non-oscillatory one whose size matches the answer.  Values are carried as
(mantissa, log-scale) pairs so that moduli like e^{-1000} are representable.
"""

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sp

from .functionals import (Combination, Density, FunctionalError, PointCombo, TransposedImage,
                          WedgeBoundary, as_box, gauss, graded_edges, panel_nodes, wsyms)

CUTOFF = 45.0          # integrand below exp(-CUTOFF) * peak is dropped
RTOL_CHECK = 1e-8      # G12 vs G8 agreement for a valid cell
FLOOR = 1e-11          # result below FLOOR * sum|integrand| is cancellation noise
H_CANDIDATES = np.linspace(0.0, 1.0, 33)


class TransformError(RuntimeError):
    pass


# ---------------------------------------------------------------- kernel algebra

class Kernel:
    """Symbolic kernel exp(phi) for one phase polynomial."""

    def __init__(self, p):
        N = p.N
        self.p = p
        self.N = N
        self.w = wsyms(N)
        self.t = sp.symbols(f"t1:{N + 1}", real=True)
        self.x = sp.symbols(f"k1:{N + 1}", real=True)
        self.r = sp.Symbol("r", positive=True)
        d = [ti - wi for ti, wi in zip(self.t, self.w)]
        self.phi_expr = sp.I * sum(di * xi for di, xi in zip(d, self.x)) - self.r * p.sympy_expr(d)
        args = (*self.w, *self.t, *self.x, self.r)
        self.args = args
        self._phi_fn = sp.lambdify(args, self.phi_expr, "numpy")
        self._dphi = [sp.lambdify(args, sp.diff(self.phi_expr, wj), "numpy") for wj in self.w]
        self._factors = {}

    def phi(self, w, tau, xi):
        return self._call(self._phi_fn, w, tau, xi)

    def dphi(self, j, w, tau, xi):
        return self._call(self._dphi[j], w, tau, xi)

    def _call(self, f, w, tau, xi):
        w = np.asarray(w, dtype=complex)
        xi = np.asarray(xi)
        if np.iscomplexobj(xi) and np.any(xi.imag != 0):
            r = bracket(xi)
        else:
            xi = np.real(xi).astype(float)
            r = float(np.linalg.norm(xi))
        out = f(*[w[..., j] for j in range(self.N)], *tau, *xi, r)
        return np.broadcast_to(np.asarray(out, dtype=complex), w.shape[:-1])

    def factor(self, alpha, btab=()):
        """Q with d^alpha_w [sum_beta b_beta d^beta_w e^phi] = Q e^phi."""
        key = (tuple(alpha), tuple((tuple(b), str(c)) for b, c in btab))
        if key not in self._factors:
            if btab:
                Q = sum(sp.sympify(c) * self._dfactor(sp.Integer(1), beta) for beta, c in btab)
            else:
                Q = sp.Integer(1)
            Q = sp.expand(self._dfactor(Q, alpha))
            self._factors[key] = sp.lambdify(self.args, Q, "numpy")
        return self._factors[key]

    def _dfactor(self, Q, alpha):
        for j, a in enumerate(alpha):
            for _ in range(a):
                Q = sp.diff(Q, self.w[j]) + Q * sp.diff(self.phi_expr, self.w[j])
        return Q

    def eval_factor(self, alpha, btab, w, tau, xi):
        return self._call(self.factor(alpha, btab), w, tau, xi)

    def factor_on_ray(self, alpha, btab, w, tau, d, radii):
        """Q(w, tau, rho d) for an array of rho, with <rho d> = rho <d>."""
        b = bracket(d) if np.iscomplexobj(d) and np.any(np.imag(d) != 0) else float(np.linalg.norm(d))
        xi = [radii * dj for dj in d]
        out = self.factor(alpha, btab)(*w, *tau, *xi, radii * b)
        return np.broadcast_to(np.asarray(out, dtype=complex), radii.shape).copy()


_KERNELS = {}


def bracket(zeta):
    """<zeta> = principal sqrt of sum zeta_j^2, the holomorphic extension of |xi|.

    Only used where |Im zeta| < |Re zeta|; outside that cone the branch is
    not the continuation from the reals and TransformError is raised.
    """
    zeta = np.atleast_1d(np.asarray(zeta, dtype=complex))
    re, im = np.linalg.norm(zeta.real), np.linalg.norm(zeta.imag)
    if im >= re and im > 0:
        raise TransformError("bracket branch: |Im zeta| >= |Re zeta|")
    return complex(np.sqrt(np.sum(zeta * zeta)))


def kernel_for(p):
    key = p.key()
    if key not in _KERNELS:
        _KERNELS[key] = Kernel(p)
    return _KERNELS[key]


# ---------------------------------------------------------------- scaled values

@dataclass
class Scaled:
    """mant * exp(log_scale); valid=False marks a failed quadrature check."""
    mant: complex
    log_scale: float
    valid: bool = True
    note: str = ""

    @property
    def value(self):
        if self.mant == 0:
            return 0j
        with np.errstate(under="ignore", over="ignore"):
            return complex(self.mant * np.exp(self.log_scale))

    @property
    def log_abs(self):
        if self.mant == 0:
            return -np.inf
        return float(np.log(abs(self.mant)) + self.log_scale)

    def normalized(self):
        if self.mant == 0 or not np.isfinite(self.mant):
            return self
        m = abs(self.mant)
        return Scaled(self.mant / m, self.log_scale + float(np.log(m)), self.valid, self.note)


def scaled_sum(items):
    """sum a_i * s_i for (a_i, Scaled s_i)."""
    items = [(a, s) for a, s in items if s.mant != 0 and a != 0]
    if not items:
        return Scaled(0j, 0.0, True, "zero")
    L = max(s.log_scale + np.log(abs(s.mant)) for _, s in items)
    tot = sum(a * s.mant * np.exp(s.log_scale - L) for a, s in items)
    mags = sum(abs(a * s.mant) * np.exp(s.log_scale - L) for a, s in items)
    valid = all(s.valid for _, s in items)
    note = ";".join(sorted({s.note for _, s in items if s.note}))
    if abs(tot) < 1e-13 * mags:
        return Scaled(0j, 0.0, False, "cancellation")
    return Scaled(complex(tot), float(L), valid, note).normalized()


# ---------------------------------------------------------------- paths

def _coarse(a, b, n):
    return a + (b - a) * np.linspace(0.0, 1.0, n)


def _path_segments(a, b, y0, eta):
    """Endpoints of the moved path a -> a+i(y0+eta) -> b+i(y0+eta) -> b (heights y0)."""
    lo, hi = complex(a, y0), complex(b, y0)
    if eta == 0:
        return [(lo, hi)]
    return [(lo, lo + 1j * eta), (lo + 1j * eta, hi + 1j * eta), (hi + 1j * eta, hi)]


def _choose_shift(ker, tau, theta, bases, bounds, cross=None, n=33):
    """h >= 0 minimizing max Re psi over the moved path, with eta_j = -h theta_j.

    Coordinates flagged in `cross` may pass the singular line Im w = 0 but
    stay at least |y|/2 away from it; the others are clipped to half the
    allowed offset.
    """
    cross = cross or [False] * len(bases)
    best = None
    for h in H_CANDIDATES:
        etas = []
        for j, (lo, hi) in enumerate(bounds):
            e = -h * float(np.real(theta[j]))
            y0 = bases[j][2]
            if cross[j]:
                Y = y0 + e
                if abs(Y) < abs(y0) / 2:
                    side = np.sign(Y) if Y != 0 else np.sign(y0)
                    e = side * abs(y0) / 2 - y0
            else:
                if np.isfinite(lo):
                    e = max(e, 0.5 * lo)
                if np.isfinite(hi):
                    e = min(e, 0.5 * hi)
            etas.append(float(e))
        axes = []
        for (a, b, y0), e in zip(bases, etas):
            axes.append(np.concatenate([_coarse(s, t, n) for s, t in _path_segments(a, b, y0, e)]))
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(bases))
        m = float(np.max(np.real(ker.phi(pts, tau, theta))))
        if best is None or m < best[0] - 1e-12:
            best = (m, etas)
    return best[1]


def _segment_panels(ker, tau, xi, seg, j, other_axes, peak, features, feat_scale, n_coarse):
    """Window and panel edges (in the segment parameter s in [0,1]) for coordinate j."""
    s0, s1 = seg
    s = np.linspace(0.0, 1.0, n_coarse)
    zj = s0 + (s1 - s0) * s
    N = ker.N
    if N == 1:
        pts = zj[:, None]
        re = np.real(ker.phi(pts, tau, xi))
        nu = np.abs(ker.dphi(0, pts, tau, xi))
    else:
        o = other_axes
        grid = [None] * N
        Z, O = np.meshgrid(zj, o, indexing="ij")
        grid[j], grid[1 - j] = Z, O
        pts = np.stack(grid, -1)
        re = np.max(np.real(ker.phi(pts, tau, xi)), axis=1)
        nu = np.max(np.abs(ker.dphi(j, pts, tau, xi)), axis=1)
    keep = np.nonzero(re - peak > -CUTOFF)[0]
    if len(keep) == 0:
        return None
    i0, i1 = max(keep[0] - 1, 0), min(keep[-1] + 1, n_coarse - 1)
    length = abs(s1 - s0)
    # cumulative phase budget: each panel carries at most ~pi of |phi'|
    nu = nu[i0:i1 + 1] * length
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (nu[1:] + nu[:-1]) * np.diff(s[i0:i1 + 1]))])
    npan = max(2, int(np.ceil(cum[-1] / np.pi)))
    targets = np.linspace(0.0, cum[-1], npan + 1)
    edges = np.interp(targets, cum, s[i0:i1 + 1]) if cum[-1] > 0 else np.linspace(s[i0], s[i1], npan + 1)
    edges = np.unique(np.concatenate([edges, np.linspace(s[i0], s[i1], 5)]))
    if features and abs((s1 - s0).imag) < 1e-15:
        # horizontal segment with nearby singular points of the amplitude
        lo, hi = (s0 + (s1 - s0) * edges[0]).real, (s0 + (s1 - s0) * edges[-1]).real
        dist = max(abs(s0.imag), 1e-12) if feat_scale is None else feat_scale
        ge = graded_edges(lo, hi, features, dist, base_panels=4)
        ge = (ge - s0.real) / (s1 - s0).real
        edges = np.unique(np.concatenate([edges, ge]))
    return edges


def _split(edges):
    mid = 0.5 * (edges[1:] + edges[:-1])
    return np.sort(np.concatenate([edges, mid]))


def _segment_nodes(seg, edges, order):
    s0, s1 = seg
    x, w = panel_nodes(edges, order)
    return s0 + (s1 - s0) * x, w * (s1 - s0)


class PathIntegrand:
    """Amplitude on the moved contour: base functional data for the engine.

    amp_for(etas), when given, returns the amplitude for a particular shift
    (branch choice), and extra(ker, tau, xi, etas) the residue or cut terms
    picked up when the contour crosses a singularity.
    """

    def __init__(self, bases, bounds, amp, features=(), feat_scale=None,
                 cross=None, amp_for=None, extra=None):
        self.bases = bases          # per coordinate (a, b, y0)
        self.bounds = bounds        # allowed extra imaginary offsets
        self.amp = amp              # callable on points (..., N) -> complex
        self.features = list(features)
        self.feat_scale = feat_scale
        self.cross = cross
        self.amp_for = amp_for
        self.extra = extra


def _path_integral(ker, tau, xi, pint, etas=None, n_coarse=None):
    """c_p-free integral of amp(w) exp(phi(w)) over the moved contour."""
    N = ker.N
    r = abs(bracket(xi)) if np.iscomplexobj(xi) else float(np.linalg.norm(xi))
    if n_coarse is None:
        n_coarse = 2049 if N == 1 else 129
    if r == 0:
        etas = [0.0] * N
    elif etas is None:
        etas = _choose_shift(ker, tau, xi / r, pint.bases, pint.bounds, pint.cross)
    segs = [_path_segments(a, b, y0, e) for (a, b, y0), e in zip(pint.bases, etas)]
    # peak of Re phi over the coarse path
    coarse = [np.concatenate([_coarse(s, t, 65 if N == 2 else 257) for s, t in sg]) for sg in segs]
    pts = np.stack(np.meshgrid(*coarse, indexing="ij"), -1).reshape(-1, N)
    peak = float(np.max(np.real(ker.phi(pts, tau, xi))))

    axes = []
    for j in range(N):
        other = coarse[1 - j] if N == 2 else None
        lst = []
        for seg in segs[j]:
            feats = pint.features if (N == 1 and pint.features) else []
            e = _segment_panels(ker, tau, xi, seg, j, other, peak, feats, pint.feat_scale, n_coarse)
            if e is not None:
                lst.append((seg, e))
        axes.append(lst)
    if any(len(a) == 0 for a in axes):
        return Scaled(0j, peak, False, "empty window")

    amp = pint.amp_for(etas) if pint.amp_for is not None else pint.amp

    def run(axes_edges, order):
        tot, mag = 0j, 0.0
        per_axis = []
        for lst in axes_edges:
            zs, ws = [], []
            for seg, e in lst:
                z, w = _segment_nodes(seg, e, order)
                zs.append(z)
                ws.append(w)
            per_axis.append((np.concatenate(zs), np.concatenate(ws)))
        if N == 1:
            z, w = per_axis[0]
            P = z[:, None]
            W = w
        else:
            (z1, w1), (z2, w2) = per_axis
            P = np.stack(np.meshgrid(z1, z2, indexing="ij"), -1).reshape(-1, 2)
            W = np.outer(w1, w2).ravel()
        with np.errstate(under="ignore"):
            f = W * amp(P) * np.exp(ker.phi(P, tau, xi) - peak)
        tot = complex(np.sum(f))
        mag = float(np.sum(np.abs(f)))
        return tot, mag

    for attempt in range(3):
        hi, mag = run(axes, GL_HI)
        lo, _ = run(axes, GL_LO)
        ok = abs(hi - lo) <= RTOL_CHECK * abs(hi) + 1e-14 * mag
        if ok:
            break
        axes = [[(seg, _split(e)) for seg, e in lst] for lst in axes]
    note = ""
    valid = bool(ok) and np.isfinite(hi)
    if not ok:
        note = "quadrature check failed"
    if abs(hi) < FLOOR * mag:
        valid = False
        note = "cancellation floor"
    out = Scaled(hi, peak, valid, note).normalized()
    if pint.extra is not None:
        ex = pint.extra(ker, tau, xi, etas)
        if ex is not None:
            out = scaled_sum([(1.0, out), (1.0, ex)])
    return out


GL_HI, GL_LO = 12, 8


# ---------------------------------------------------------------- dispatch

def _density_integrands(mu, mult=None):
    out = []
    for box, prof in mu.profile.pieces(mu.support):
        bases = [(a, b, 0.0) for a, b in box.intervals]
        bounds = [(-np.inf, np.inf)] * mu.N
        amp = prof if mult is None else (lambda P, prof=prof: prof(P) * mult(P))
        out.append(PathIntegrand(bases, bounds, amp))
    return out


def _wedge_integrand(mu, mult=None):
    bases = [(a, b, float(y)) for (a, b), y in zip(mu.V.intervals, mu.y)]
    amp = mu.g_values if mult is None else (lambda P: mu.g_values(P) * mult(P))
    if not mu.half_plane:
        return PathIntegrand(bases, mu.shift_bounds(), amp, mu.features(),
                             feat_scale=float(np.min(np.abs(mu.y))) / 2)
    (a, b), = mu.V.intervals
    y = float(mu.y[0])
    sgn = np.sign(y)
    encloses = a < 0 < b
    m = mult if mult is not None else (lambda P: np.ones(P.shape[:-1], complex))

    def crossed(etas):
        return encloses and np.sign(y + etas[0]) != sgn

    def g_branch(P):
        # log with its cut along the ray from 0 away from the wedge side
        z = P[..., 0]
        ang = np.angle(z)
        if sgn > 0:
            ang = np.where(ang < -np.pi / 2, ang + 2 * np.pi, ang)
        else:
            ang = np.where(ang > np.pi / 2, ang - 2 * np.pi, ang)
        return np.log(np.abs(z)) + 1j * ang

    def amp_for(etas):
        if mu.g == "log" and crossed(etas):
            return lambda P: g_branch(P) * m(P)
        return amp

    def extra(ker, tau, xi, etas):
        if not crossed(etas):
            return None
        if mu.g == "reciprocal":
            z0 = np.zeros((1, 1), complex)
            ph = complex(ker.phi(z0, tau, xi)[0])
            val = -sgn * 2j * np.pi * complex(m(z0)[0]) * np.exp(1j * ph.imag)
            return Scaled(val, ph.real).normalized()
        # jump 2 pi i of log across the cut from 0 to depth |Y|
        d = abs(y + etas[0])
        t, wt = panel_nodes(np.linspace(0.0, d, 65), GL_HI)
        P = (-1j * sgn * t)[:, None]
        ph = ker.phi(P, tau, xi)
        pk = float(np.max(ph.real))
        val = -2 * np.pi * np.sum(wt * m(P) * np.exp(ph - pk))
        return Scaled(complex(val), pk).normalized()

    return PathIntegrand(bases, [(-np.inf, np.inf)], amp, mu.features(),
                         feat_scale=abs(y) / 2, cross=[True], amp_for=amp_for, extra=extra)


def fbi_scaled(mu, p, tau, xi):
    """F_p mu(tau, xi) as a Scaled value."""
    ker = kernel_for(p)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    xi = np.atleast_1d(np.asarray(xi))
    if np.iscomplexobj(xi) and np.any(xi.imag != 0):
        bracket(xi)
    else:
        xi = np.real(xi).astype(float)
    if len(tau) != p.N or len(xi) != p.N or mu.N != p.N:
        raise TransformError("dimension mismatch between functional, phase and covector")
    cp = p.c_p
    if isinstance(mu, Combination):
        return scaled_sum([(a, fbi_scaled(nu, p, tau, xi)) for a, nu in _merged(mu)])
    if isinstance(mu, PointCombo):
        return _points_scaled(ker, mu.atoms, (), tau, xi, cp)
    if isinstance(mu, TransposedImage):
        base = mu.base
        if isinstance(base, PointCombo):
            return _points_scaled(ker, base.atoms, mu.btab, tau, xi, cp)
        f = ker.factor((0,) * p.N, mu.btab)
        mult = lambda P: ker._call(f, P, tau, xi)
        if isinstance(base, Density):
            pints = _density_integrands(base, mult)
        elif isinstance(base, WedgeBoundary):
            pints = [_wedge_integrand(base, mult)]
        elif isinstance(base, Combination):
            parts = [(a, fbi_scaled(TransposedImage(nu, mu.btab, mu.label), p, tau, xi))
                     for a, nu in _merged(base)]
            return scaled_sum(parts)
        else:
            raise TransformError(f"cannot transform operator image of {type(base).__name__}")
        return _scale_cp(scaled_sum([(1.0, _path_integral(ker, tau, xi, pi)) for pi in pints]), cp)
    if isinstance(mu, Density):
        parts = [(1.0, _path_integral(ker, tau, xi, pi)) for pi in _density_integrands(mu)]
        return _scale_cp(scaled_sum(parts), cp)
    if isinstance(mu, WedgeBoundary):
        return _scale_cp(_path_integral(ker, tau, xi, _wedge_integrand(mu)), cp)
    raise TransformError(f"unsupported functional {type(mu).__name__}")


def _scale_cp(s, cp):
    return Scaled(s.mant * cp, s.log_scale, s.valid, s.note)


def _merged(comb):
    """Combine equal parts so that exact differences vanish identically."""
    acc = {}
    order = []
    for a, nu in comb.parts:
        key = json.dumps(nu.to_dict(), sort_keys=True, default=str)
        if key not in acc:
            acc[key] = [0.0, nu]
            order.append(key)
        acc[key][0] += a
    return [(acc[k][0], acc[k][1]) for k in order if acc[k][0] != 0]


def _points_scaled(ker, atoms, btab, tau, xi, cp):
    items = []
    for at in atoms:
        x = np.array(at.x, dtype=complex)[None, :]
        ph = complex(ker.phi(x, tau, xi)[0])
        Q = complex(ker.eval_factor(at.alpha, btab, x, tau, xi)[0])
        items.append((at.c * cp, Scaled(Q, ph.real).normalized() if Q != 0 else Scaled(0j, 0.0)))
        items[-1] = (items[-1][0] * np.exp(1j * ph.imag), items[-1][1])
    s = scaled_sum(items)
    if s.note == "cancellation":
        # closed forms cancel exactly only when the combination is zero
        return Scaled(0j, 0.0, True, "zero")
    return s


def fbi_ray(mu, p, tau, direction, radii):
    """F_p mu(tau, rho d) for many rho along one (possibly complex) direction d.

    psi = phi / rho does not depend on rho, so a single contour and a single
    panel layout (sized for the largest rho) serve the whole ray.  Returns
    (mant, log_scale, valid) arrays.
    """
    ker = kernel_for(p)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    d = np.atleast_1d(np.asarray(direction, dtype=complex))
    radii = np.asarray(radii, dtype=float)
    b = abs(bracket(d))
    d, radii = d / b, radii * b
    if not np.any(d.imag != 0):
        d = d.real
    cp = p.c_p
    K = len(radii)
    if isinstance(mu, Combination):
        parts = [(a, fbi_ray(nu, p, tau, d, radii)) for a, nu in _merged(mu)]
        return _ray_sum(parts, K)
    if isinstance(mu, TransposedImage) and isinstance(mu.base, Combination):
        parts = [(a, fbi_ray(TransposedImage(nu, mu.btab, mu.label), p, tau, d, radii))
                 for a, nu in _merged(mu.base)]
        return _ray_sum(parts, K)
    if isinstance(mu, PointCombo) or (isinstance(mu, TransposedImage) and isinstance(mu.base, PointCombo)):
        atoms, btab = (mu.atoms, ()) if isinstance(mu, PointCombo) else (mu.base.atoms, mu.btab)
        parts = []
        for at in atoms:
            x = np.array(at.x, dtype=complex)[None, :]
            ph = complex(ker.phi(x, tau, d)[0])
            Q = ker.factor_on_ray(at.alpha, btab, x[0], tau, d, radii)
            with np.errstate(divide="ignore"):
                ls = radii * ph.real + np.log(np.abs(Q))
            m = np.where(Q != 0, Q / np.where(Q != 0, np.abs(Q), 1), 0) * np.exp(1j * radii * ph.imag)
            parts.append((at.c * cp, (m, np.where(Q != 0, ls, 0.0), np.ones(K, bool))))
        mant, ls, ok = _ray_sum(parts, K)
        return mant, ls, np.ones(K, bool)
    if isinstance(mu, TransposedImage):
        f = ker.factor((0,) * p.N, mu.btab)
        base = mu.base
        mults = lambda rr: (lambda P: ker._call(f, P, tau, rr * d))
    else:
        base = mu
        mults = None
    if isinstance(base, Density):
        pints = _density_integrands(base)
    elif isinstance(base, WedgeBoundary):
        pints = [_wedge_integrand(base)]
    else:
        raise TransformError(f"unsupported functional {type(mu).__name__}")
    parts = [(cp, _path_ray(ker, tau, d, radii, pi, mults,
                            base if isinstance(base, WedgeBoundary) else None)) for pi in pints]
    return _ray_sum(parts, K)


def _ray_sum(parts, K):
    """Vectorized scaled_sum over the radii of a ray (K may be a shape)."""
    K = tuple(np.atleast_1d(K))
    if not parts:
        return np.zeros(K, complex), np.zeros(K), np.ones(K, bool)
    A = np.array([a for a, _ in parts], dtype=complex).reshape((-1,) + (1,) * len(K))
    M = np.array([np.broadcast_to(m, K) for _, (m, _, _) in parts], dtype=complex)
    Ls = np.array([np.broadcast_to(l, K) for _, (_, l, _) in parts], dtype=float)
    V = np.array([np.broadcast_to(v, K) for _, (_, _, v) in parts], dtype=bool)
    live = (M != 0) & (A != 0)
    with np.errstate(divide="ignore"):
        lg = np.where(live, Ls + np.log(np.abs(np.where(live, M, 1))), -np.inf)
    L = np.max(lg, axis=0)
    any_live = np.isfinite(L)
    Lz = np.where(any_live, L, 0.0)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        e = np.where(live, np.exp(np.where(live, Ls, 0.0) - Lz), 0.0)
        tot = np.sum(np.where(live, A * M * e, 0), axis=0)
        mags = np.sum(np.where(live, np.abs(A * M) * e, 0), axis=0)
    valid = np.all(V | ~live, axis=0)
    cancel = any_live & (np.abs(tot) < 1e-13 * mags)
    good = any_live & ~cancel
    at = np.abs(tot)
    mant = np.where(good, tot / np.where(good, at, 1), 0j)
    with np.errstate(divide="ignore"):
        ls = np.where(good, Lz + np.log(np.where(good, at, 1)), 0.0)
    ok = np.where(good, valid, ~cancel)
    return mant, ls, ok


def bracket_rows(d):
    """<d> for an array of covectors (last axis), with the branch check."""
    d = np.asarray(d, dtype=complex)
    if np.any(np.linalg.norm(d.imag, axis=-1) >= np.linalg.norm(d.real, axis=-1)):
        bad = np.linalg.norm(d.imag, axis=-1) > 0
        if np.any(bad & (np.linalg.norm(d.imag, axis=-1) >= np.linalg.norm(d.real, axis=-1))):
            raise TransformError("bracket branch: |Im zeta| >= |Re zeta|")
    return np.sqrt(np.sum(d * d, axis=-1))


def fbi_rays(mu, p, taus, dirs, radii):
    """F_p mu(tau_t, rho d_{t,i}) on a (T, D, K) block.

    dirs has shape (D, N) or (T, D, N) when the directions depend on tau.
    Point functionals are evaluated in closed form on the whole block;
    everything else goes ray by ray through fbi_ray.
    """
    taus = np.atleast_2d(np.asarray(taus, dtype=float))
    T, N = taus.shape
    dirs = np.asarray(dirs, dtype=complex)
    if dirs.ndim == 2:
        dirs = np.broadcast_to(dirs, (T,) + dirs.shape)
    D = dirs.shape[1]
    radii = np.asarray(radii, dtype=float)
    K = len(radii)
    base, btab = mu, ()
    if isinstance(mu, TransposedImage):
        base, btab = mu.base, mu.btab
    if isinstance(base, PointCombo):
        ker = kernel_for(p)
        b = bracket_rows(dirs)                                    # (T, D)
        xi = [radii[None, None, :] * dirs[..., j, None] for j in range(N)]
        r = radii[None, None, :] * b[..., None]
        tt = [taus[:, j, None, None] for j in range(N)]
        parts = []
        for at in base.atoms:
            w = [complex(x) for x in at.x]
            ph = np.broadcast_to(ker._phi_fn(*w, *tt, *xi, r), (T, D, K))
            Q = np.broadcast_to(np.asarray(ker.factor(at.alpha, btab)(*w, *tt, *xi, r), complex), (T, D, K))
            nz = Q != 0
            with np.errstate(divide="ignore"):
                ls = np.where(nz, ph.real + np.log(np.abs(np.where(nz, Q, 1))), 0.0)
            m = np.where(nz, Q / np.where(nz, np.abs(Q), 1), 0) * np.exp(1j * ph.imag)
            parts.append((at.c * p.c_p, (m, ls, np.ones((T, D, K), bool))))
        mant, ls, _ = _ray_sum(parts, (T, D, K))
        return mant, ls, np.ones((T, D, K), bool)
    mant = np.zeros((T, D, K), complex)
    ls = np.zeros((T, D, K))
    ok = np.zeros((T, D, K), bool)
    for t in range(T):
        for i in range(D):
            d = dirs[t, i]
            mant[t, i], ls[t, i], ok[t, i] = fbi_ray(mu, p, taus[t], d if np.any(d.imag) else d.real, radii)
    return mant, ls, ok


def _path_ray(ker, tau, d, radii, pint, mults, wedge):
    N = ker.N
    rmax = float(np.max(radii))
    if rmax == 0:
        etas = [0.0] * N
    else:
        etas = _choose_shift(ker, tau, d, pint.bases, pint.bounds, pint.cross)
    segs = [_path_segments(a, b, y0, e) for (a, b, y0), e in zip(pint.bases, etas)]
    coarse = [np.concatenate([_coarse(s0, s1, 65 if N == 2 else 257) for s0, s1 in sg]) for sg in segs]
    n_coarse = 2049 if N == 1 else 129
    axes = []
    for j in range(N):
        other = coarse[1 - j] if N == 2 else None
        lst = []
        for seg in segs[j]:
            feats = pint.features if (N == 1 and pint.features) else []
            e = _segment_panels(ker, tau, rmax * d, seg, j, other, -np.inf, feats, pint.feat_scale, n_coarse)
            lst.append((seg, e))
        axes.append(lst)
    amp0 = pint.amp_for(etas) if pint.amp_for is not None else pint.amp
    K = len(radii)

    def run(axes_edges, order, pk=None):
        per_axis = []
        for lst in axes_edges:
            zs, ws = zip(*[_segment_nodes(seg, e, order) for seg, e in lst])
            per_axis.append((np.concatenate(zs), np.concatenate(ws)))
        if N == 1:
            P = per_axis[0][0][:, None]
            W = per_axis[0][1]
        else:
            (z1, w1), (z2, w2) = per_axis
            P = np.stack(np.meshgrid(z1, z2, indexing="ij"), -1).reshape(-1, 2)
            W = np.outer(w1, w2).ravel()
        psi = ker.phi(P, tau, d)
        if pk is None:
            pk = float(np.max(psi.real))
        base = W * amp0(P)
        tot = np.zeros(K, complex)
        mag = np.zeros(K)
        for i, rr in enumerate(radii):
            with np.errstate(under="ignore"):
                f = base * np.exp(rr * (psi - pk))
            if mults is not None:
                f = f * mults(rr)(P)
            tot[i] = np.sum(f)
            mag[i] = np.sum(np.abs(f))
        return tot, mag, pk

    for attempt in range(3):
        hi, mag, pk = run(axes, GL_HI)
        lo, _, _ = run(axes, GL_LO, pk)
        ok = np.abs(hi - lo) <= RTOL_CHECK * np.abs(hi) + 1e-14 * mag
        if np.all(ok):
            break
        axes = [[(seg, _split(e)) for seg, e in lst] for lst in axes]
    ok = ok & (np.abs(hi) >= FLOOR * mag) & np.isfinite(hi)
    with np.errstate(divide="ignore"):
        mant = np.where(hi != 0, hi / np.where(hi != 0, np.abs(hi), 1), 0)
        ls = np.where(hi != 0, radii * pk + np.log(np.abs(np.where(hi != 0, hi, 1))), 0.0)
    if pint.extra is not None:
        out_m, out_l = mant.copy(), ls.copy()
        for i, rr in enumerate(radii):
            if mults is None:
                ex = pint.extra(ker, tau, rr * d, etas)
            else:
                ex = _wedge_integrand(wedge, mults(rr)).extra(ker, tau, rr * d, etas)
            if ex is not None:
                s = scaled_sum([(1.0, Scaled(mant[i], ls[i], bool(ok[i]))), (1.0, ex)])
                out_m[i], out_l[i], ok[i] = s.mant, s.log_scale, s.valid
        mant, ls = out_m, out_l
    return mant, ls, ok


def fbi(mu, p, tau, xi):
    """Complex value of F_p mu(tau, xi) (may underflow; see fbi_scaled)."""
    s = fbi_scaled(mu, p, tau, xi)
    if not s.valid:
        raise TransformError(f"quadrature failure at tau={tau}, xi={xi}: {s.note}")
    return s.value


# ---------------------------------------------------------------- grids

def default_radii(N):
    jmax = 24 if N == 1 else 12
    return 2.0 ** (np.arange(jmax + 1) / 2.0)


def directions(N, n_dir=8):
    if N == 1:
        return np.array([[1.0], [-1.0]])
    th = 2 * np.pi * np.arange(n_dir) / n_dir
    return np.stack([np.cos(th), np.sin(th)], -1)


@dataclass
class SampleGrid:
    base_points: np.ndarray
    directions: np.ndarray
    radii: np.ndarray
    mant: np.ndarray          # complex, |mant| = 1 or 0
    log_scale: np.ndarray
    valid: np.ndarray
    phase_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if np.any(r[1:] / r[:-1] < 1.1 - 1e-12):
            raise TransformError("radii must increase with ratio >= 1.1")

    @property
    def N(self):
        return self.base_points.shape[1]

    @property
    def log_abs(self):
        with np.errstate(divide="ignore"):
            return np.where(self.mant == 0, -np.inf, np.log(np.abs(self.mant)) + self.log_scale)

    @property
    def values(self):
        with np.errstate(under="ignore", over="ignore"):
            return self.mant * np.exp(self.log_scale)

    def ray(self, b, d):
        return self.radii, self.log_abs[b, d], self.valid[b, d]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        N = self.N
        w.writerow([f"tau_{j + 1}" for j in range(N)] + [f"theta_{j + 1}" for j in range(N)]
                   + ["r", "re", "im", "abs", "log_abs", "valid"])
        vals, la = self.values, self.log_abs
        for b, tau in enumerate(self.base_points):
            for d, th in enumerate(self.directions):
                for i, r in enumerate(self.radii):
                    v = vals[b, d, i]
                    w.writerow([_f(x) for x in tau] + [_f(x) for x in th]
                               + [_f(r), _f(v.real), _f(v.imag), _f(abs(v)), _f(la[b, d, i]),
                                  int(self.valid[b, d, i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, phase_id=""):
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        head, rows = rows[0], rows[1:]
        N = sum(1 for h in head if h.startswith("tau_"))
        taus, ths, rs = [], [], []
        for row in rows:
            t = tuple(float(x) for x in row[:N])
            th = tuple(float(x) for x in row[N:2 * N])
            r = float(row[2 * N])
            for lst, v in ((taus, t), (ths, th), (rs, r)):
                if v not in lst:
                    lst.append(v)
        B, D, R = len(taus), len(ths), len(rs)
        mant = np.zeros((B, D, R), complex)
        ls = np.zeros((B, D, R))
        valid = np.zeros((B, D, R), bool)
        for row in rows:
            b = taus.index(tuple(float(x) for x in row[:N]))
            d = ths.index(tuple(float(x) for x in row[N:2 * N]))
            i = rs.index(float(row[2 * N]))
            re, im, la = float(row[2 * N + 1]), float(row[2 * N + 2]), float(row[2 * N + 4])
            v = complex(re, im)
            if np.isfinite(la):
                mant[b, d, i] = v / abs(v) if v != 0 else 1.0
                ls[b, d, i] = la
            valid[b, d, i] = bool(int(row[-1]))
        return cls(np.array(taus), np.array(ths), np.array(rs), mant, ls, valid, phase_id)


def _f(x):
    return repr(float(x))


def grid_from_spec(spec, N):
    taus = np.array(spec.get("taus", [[0.0] * N]), dtype=float).reshape(-1, N)
    if "directions" in spec:
        ths = np.array(spec["directions"], dtype=float).reshape(-1, N)
        ths = ths / np.linalg.norm(ths, axis=1, keepdims=True)
    else:
        ths = directions(N, spec.get("n_dir", 8))
    if "radii" in spec:
        radii = np.array(spec["radii"], dtype=float)
    else:
        jmax = spec.get("jmax", 24 if N == 1 else 12)
        radii = 2.0 ** (np.arange(spec.get("jmin", 0), jmax + 1) / 2.0)
    return taus, ths, radii


def fbi_grid(mu, p, grid_spec=None, threads=1, taus=None, dirs=None, radii=None):
    """Evaluate F_p mu over base points x directions x radii.

    Rows (tau, theta) are independent and may run on a thread pool; the
    assembled arrays do not depend on the schedule.
    """
    N = p.N
    spec = dict(grid_spec or {})
    T, D, R = grid_from_spec(spec, N)
    if taus is not None:
        T = np.asarray(taus, float).reshape(-1, N)
    if dirs is not None:
        D = np.asarray(dirs, float).reshape(-1, N)
    if radii is not None:
        R = np.asarray(radii, float)
    kernel_for(p)  # build symbolic kernels before any fan-out
    _prime_factors(mu, p)
    jobs = [(b, d) for b in range(len(T)) for d in range(len(D))]

    def row(job):
        b, d = job
        out = []
        for r in R:
            try:
                s = fbi_scaled(mu, p, T[b], r * D[d])
            except (FunctionalError, TransformError, FloatingPointError, ValueError) as exc:
                s = Scaled(0j, 0.0, False, str(exc))
            out.append(s)
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(row, jobs))
    else:
        rows = [row(j) for j in jobs]
    mant = np.zeros((len(T), len(D), len(R)), complex)
    ls = np.zeros(mant.shape)
    valid = np.zeros(mant.shape, bool)
    notes = {}
    for (b, d), rr in zip(jobs, rows):
        for i, s in enumerate(rr):
            mant[b, d, i] = s.mant
            ls[b, d, i] = s.log_scale
            valid[b, d, i] = s.valid and np.isfinite(s.mant)
            if s.note and not s.valid:
                notes[f"{b},{d},{i}"] = s.note
    meta = {"invalid_notes": notes}
    return SampleGrid(T, D, R, mant, ls, valid, phase_id=json.dumps(p.to_dict()["terms"]), meta=meta)


def _prime_factors(mu, p):
    ker = kernel_for(p)
    if isinstance(mu, Combination):
        for _, nu in mu.parts:
            _prime_factors(nu, p)
    elif isinstance(mu, PointCombo):
        for a in mu.atoms:
            ker.factor(a.alpha)
    elif isinstance(mu, TransposedImage):
        base = mu.base
        if isinstance(base, PointCombo):
            for a in base.atoms:
                ker.factor(a.alpha, mu.btab)
        else:
            ker.factor((0,) * p.N, mu.btab)
        if isinstance(base, Combination):
            for _, nu in base.parts:
                _prime_factors(TransposedImage(nu, mu.btab, mu.label), p)


# ---------------------------------------------------------------- a-priori bound

def apriori_bound_audit(grid, mu=None, p=None, tol=1e-6):
    """max over cells of log|F|/r, against the bound implied by the carrier."""
    la = grid.log_abs
    ok = grid.valid & np.isfinite(la)
    R = np.broadcast_to(grid.radii, la.shape)
    rate = float(np.max(la[ok] / R[ok])) if np.any(ok) else float("nan")
    rep = {"max_log_growth_rate": rate, "r0": float(grid.radii[0]), "tol": tol}
    if mu is not None and p is not None:
        logC = np.log(p.c_p * _mass_bound(mu))
        rep["log_C"] = float(logC)
        if isinstance(mu, WedgeBoundary):
            bound = float(np.max(np.abs(mu.y))) + tol + max(logC, 0.0) / grid.radii[0]
            rep["bound"] = bound
            rep["ok"] = bool(rate <= bound)
        else:
            bound = max(logC, 0.0) / grid.radii[0] + tol
            rep["bound"] = float(bound)
            rep["max_abs_over_C"] = float(np.max(la[ok] - logC)) if np.any(ok) else float("nan")
            rep["ok"] = bool(rate <= bound)
    return rep


def _mass_bound(mu):
    if isinstance(mu, Density):
        return mu.support.volume * mu.profile.sup_abs(mu.support)
    if isinstance(mu, PointCombo):
        return float(sum(abs(a.c) for a in mu.atoms))
    if isinstance(mu, WedgeBoundary):
        n = 401
        x = np.linspace(mu.V.intervals[0][0], mu.V.intervals[0][1], n)
        if mu.N == 1:
            g = np.abs(mu.g_values((x + 1j * mu.y[0])[:, None]))
            return float(np.trapezoid(g, x))
        return mu.V.volume * 10.0
    if isinstance(mu, Combination):
        return float(sum(abs(a) * _mass_bound(nu) for a, nu in mu.parts))
    return 1.0


# ---------------------------------------------------------------- inversion

@dataclass
class InversionResult:
    eps: float
    W: object
    points: np.ndarray
    evaluation: np.ndarray
    truncation_radius: float
    xi_nodes: np.ndarray = None
    xi_weights: np.ndarray = None
    G: np.ndarray = None

    def at(self, x):
        return _mu_eps(self, np.atleast_1d(np.asarray(x, float)))

    def pair(self, h, panels=None):
        """int_W mu_eps h dx by quadrature over W."""
        (a, b), = self.W.intervals
        if panels is None:
            panels = int(np.ceil((b - a) * (self.truncation_radius + 1) / np.pi)) + 8
        x, wx = panel_nodes(np.linspace(a, b, panels + 1), GL_HI)
        hx = h(x[:, None])
        E = np.exp(1j * np.outer(self.xi_nodes, x))
        return complex((self.xi_weights * self.G) @ (E @ (wx * hx)) / (2 * np.pi))


def _mu_eps(res, x):
    (a, b), = res.W.intervals
    inside = (x >= a) & (x <= b)
    E = np.exp(1j * np.outer(x, res.xi_nodes))
    val = E @ (res.xi_weights * res.G) / (2 * np.pi)
    return np.where(inside, val, 0.0)


def _demodulated(mu, p, taus, xi):
    """e^{-i tau xi} F_p mu(tau, xi) for many real tau at one real xi (N = 1)."""
    cp = p.c_p
    r = abs(xi)
    if isinstance(mu, Combination):
        return sum(a * _demodulated(nu, p, taus, xi) for a, nu in _merged(mu))
    if isinstance(mu, PointCombo):
        ker = kernel_for(p)
        out = 0
        for at in mu.atoms:
            x = np.array(at.x, complex)[None, :]
            Q = np.array([complex(ker.eval_factor(at.alpha, (), x, [t], [xi])[0]) for t in taus])
            out = out + at.c * Q * np.exp(-1j * x[0, 0] * xi - r * p(taus - x[0, 0]))
        return cp * out
    if isinstance(mu, Density):
        out = 0
        for box, prof in mu.profile.pieces(mu.support):
            (a, b), = box.intervals
            n = int(np.ceil((b - a) * (r + 2 * np.sqrt(r) + 1) / (2 * np.pi))) + 2
            w, ww = panel_nodes(np.linspace(a, b, n + 1), GL_HI)
            v = ww * prof(w[:, None]) * np.exp(-1j * w * xi)
            A = np.exp(-r * _real_phase(p, taus[:, None] - w[None, :]))
            out = out + A @ v
        return cp * out
    if isinstance(mu, WedgeBoundary):
        (a, b), = mu.V.intervals
        edges = graded_edges(a, b, mu.features(), abs(mu.y[0]),
                             base_panels=int(np.ceil((b - a) * (r + 4 * np.sqrt(r) + 1) / np.pi)) + 2)
        x, ww = panel_nodes(edges, GL_HI)
        z = x + 1j * mu.y[0]
        v = ww * mu.g_values(z[:, None]) * np.exp(-1j * z * xi)
        A = np.exp(-r * p(taus[:, None] - z[None, :]))
        return cp * (A @ v)
    raise TransformError(f"inversion does not support {type(mu).__name__}")


def _real_phase(p, d):
    out = np.zeros(d.shape)
    for (a,), c in p.terms:
        out += float(np.real(c)) * d ** a
    return out


def invert(mu, p, eps, x_points=(), W=None, R_max=2000.0, c=None, tau_box=None, xi_max=None):
    """mu_eps(x) = chi_W(x) (2 pi)^{-1} int int e^{i(x-tau)xi - eps xi^2} F(tau,xi) |xi|^{1/2k} dtau dxi.

    N = 1.  The xi-integral runs over |xi| <= R with exp(-eps R^2) = 1e-14,
    substituted as xi = +-u^{2k} so the |xi|^{1/2k} factor is smooth.
    tau_box restricts the tau-integral (the localized mu_0^eps); xi_max
    lowers R when F is known to decay on its own.
    """
    if p.N != 1:
        raise TransformError("invert is implemented for N = 1")
    if eps <= 0:
        raise TransformError("eps must be positive")
    W = as_box(W) if W is not None else as_box([[mu.carrier.intervals[0][0] - 1, mu.carrier.intervals[0][1] + 1]])
    (wa, wb), = W.intervals
    (ca, cb), = mu.carrier.intervals
    if not (wa < ca and cb < wb):
        raise TransformError("carrier must be compactly contained in W")
    R = float(np.sqrt(np.log(1e14) / eps))
    if xi_max is not None:
        R = min(R, float(xi_max))
    if R > R_max:
        raise TransformError(f"truncation radius {R:.1f} exceeds the configured maximum {R_max}")
    k = p.k
    m = 2 * k
    if c is None:
        c = p.cert.c if p.cert is not None else 1.0
    # xi-panels carry at most 2 pi of the phase (x - w) xi; the nodes sit in
    # u = |xi|^{1/m}, where the weight |xi|^{1/m} is smooth
    span = max(abs(wb - ca), abs(cb - wa)) + 1.0
    n_xi = int(np.ceil(span * R / (2 * np.pi))) + 4
    u_edges = (np.linspace(0.0, R, n_xi + 1)) ** (1.0 / m)
    u, wu = panel_nodes(u_edges, GL_HI)
    xi_pos = u ** m
    jac = m * u ** (m - 1)
    xis = np.concatenate([-xi_pos[::-1], xi_pos])
    wts = np.concatenate([(wu * jac)[::-1], wu * jac])
    G = np.zeros(len(xis), complex)
    for i, xi in enumerate(xis):
        r = abs(xi)
        # kernel exp(-r c |tau - w|^m) is below e^{-CUTOFF} past L
        scale = (c * r) ** (-1.0 / m)
        L = CUTOFF ** (1.0 / m) * scale
        ta, tb = ca - L, cb + L
        if tau_box is not None:
            (ba, bb), = as_box(tau_box).intervals
            ta, tb = max(ta, ba), min(tb, bb)
            if tb <= ta:
                continue
        nt = int(np.ceil((tb - ta) / scale)) + 4
        t, wt = panel_nodes(np.linspace(ta, tb, nt + 1), GL_HI)
        D = _demodulated(mu, p, t, xi)
        G[i] = np.exp(-eps * xi * xi) * r ** (1.0 / m) * np.sum(wt * D)
    res = InversionResult(eps, W, np.asarray(x_points, float), None, R, xis, wts, G)
    res.evaluation = _mu_eps(res, np.atleast_1d(np.asarray(x_points, float))) if len(res.points) else np.zeros(0, complex)
    return res
