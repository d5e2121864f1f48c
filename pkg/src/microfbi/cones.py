"""Cone covers and the pieces F_1, f_j, R_j of the microlocal decomposition.

Cones in N = 2 are angular sectors [lo, hi) measured in radians; in N = 1 a
cone is a sign.  All integrals over a cone are done in polar form with the
radial variable substituted as rho = u^{2k}, which makes the weight
|xi|^{N/2k} rho^{N-1} polynomial in u.
"""

from dataclasses import dataclass, field

import itertools

import numpy as np

from .functionals import as_box, panel_nodes
from .transform import CUTOFF, TransformError, bracket_rows, fbi_rays, invert

TWO_PI = 2 * np.pi


class CoverError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cone:
    N: int
    sign: int = 0
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.N == 1:
            if self.sign not in (-1, 1):
                raise CoverError("N=1 cone needs sign +1 or -1")
        elif self.N == 2:
            if not 0 < self.hi - self.lo < TWO_PI:
                raise CoverError("sector opening must lie in (0, 2 pi)")
        else:
            raise CoverError("cones are implemented for N = 1, 2")

    @property
    def opening(self):
        return np.pi if self.N == 1 else self.hi - self.lo

    @property
    def acute(self):
        return self.N == 1 or self.opening < np.pi

    @property
    def center(self):
        if self.N == 1:
            return np.array([float(self.sign)])
        a = 0.5 * (self.lo + self.hi)
        return np.array([np.cos(a), np.sin(a)])

    def contains(self, v, closed=False):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.N == 1:
            return self.sign * v[:, 0] >= 0 if closed else self.sign * v[:, 0] > 0
        ang = np.mod(np.arctan2(v[:, 1], v[:, 0]) - self.lo, TWO_PI)
        w = self.hi - self.lo
        return (ang <= w + 1e-12) | (ang >= TWO_PI - 1e-12) if closed else (ang > 0) & (ang < w)

    def sample(self, n, rng):
        if self.N == 1:
            return self.sign * rng.uniform(0.01, 10.0, (n, 1))
        a = rng.uniform(self.lo, self.hi, n)
        rad = rng.uniform(0.01, 10.0, n)
        return np.stack([rad * np.cos(a), rad * np.sin(a)], 1)

    def to_dict(self):
        if self.N == 1:
            return {"N": 1, "sign": self.sign}
        return {"N": 2, "lo": self.lo, "hi": self.hi}


@dataclass
class CoverSpec:
    cones: list
    duals: list
    c: float
    xi0: np.ndarray
    x0: np.ndarray
    a: float = None
    beta: float = 0.0
    c_per_cone: list = field(default_factory=list)

    @property
    def N(self):
        return self.cones[0].N

    @property
    def L(self):
        return len(self.cones)

    def to_dict(self):
        return {"N": self.N, "L": self.L, "xi0": self.xi0.tolist(), "x0": self.x0.tolist(),
                "a": self.a, "beta": self.beta, "c": self.c, "c_per_cone": self.c_per_cone,
                "cones": [k.to_dict() for k in self.cones], "duals": [k.to_dict() for k in self.duals]}


def _check_tiling(cones):
    if cones[0].N == 1:
        signs = sorted(k.sign for k in cones)
        if signs != [-1, 1]:
            raise CoverError("N=1 cover must be the two half-lines")
        return
    secs = sorted(((np.mod(k.lo, TWO_PI), k.hi - k.lo) for k in cones))
    if abs(sum(w for _, w in secs) - TWO_PI) > 1e-9:
        raise CoverError("sector openings must add up to 2 pi")
    for (l1, w1), (l2, _) in zip(secs, secs[1:] + [(secs[0][0] + TWO_PI, 0)]):
        if abs(l1 + w1 - l2) > 1e-9:
            raise CoverError("sectors overlap or leave a gap")


def validate_cover(cover, n_pairs=1000, seed=0):
    """Tiling, acuteness, dual-cone inequality and the opposite-cone condition."""
    rng = np.random.default_rng(seed)
    _check_tiling(cover.cones)
    if not all(k.acute for k in cover.cones):
        raise CoverError("cones must be acute")
    if not cover.cones[0].contains(cover.xi0)[0]:
        raise CoverError("xi0 must lie inside C_1")
    worst = np.inf
    for j, (C, G) in enumerate(zip(cover.cones, cover.duals)):
        v = G.sample(n_pairs, rng)
        xi = C.sample(n_pairs, rng)
        ratio = np.sum(v * xi, 1) / (np.linalg.norm(v, axis=1) * np.linalg.norm(xi, axis=1))
        worst = min(worst, float(np.min(ratio)))
        if np.any(ratio < cover.c - 1e-12):
            raise CoverError(f"dual-cone inequality fails on cone {j + 1}")
        if j >= 1 and np.any(v @ cover.xi0 >= 0):
            raise CoverError(f"dual cone {j + 1} is not opposite to xi0")
    return {"tiling": True, "dual_inequality_min_ratio": worst, "c": cover.c,
            "opposite_cone": True, "pairs_per_cone": n_pairs}


def build_cover(N, L, xi0, beta=0.1, x0=None, a=None, seed=0):
    """Equal sectors with xi0 bisecting C_1.

    Gamma_1 is the sector of half-angle beta around xi0.  For j >= 2 the
    bisector sector is generally not opposite to xi0, so Gamma_j is centred
    in the admissible interval of directions v with v.xi > 0 on C_j and
    v.xi0 < 0, with half-angle min(beta, 0.9 * half its width).
    """
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    if len(xi0) != N or np.linalg.norm(xi0) == 0:
        raise CoverError("xi0 must be a nonzero covector of length N")
    xi0 = xi0 / np.linalg.norm(xi0)
    x0 = np.zeros(N) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    if N == 1:
        if L != 2:
            raise CoverError("N=1 covers have exactly two cones")
        s = int(np.sign(xi0[0]))
        cones = [Cone(1, s), Cone(1, -s)]
        cover = CoverSpec(cones, list(cones), 1.0, xi0, x0, a, beta, [1.0, 1.0])
        validate_cover(cover, seed=seed)
        return cover
    if N != 2:
        raise CoverError("covers are implemented for N = 1, 2")
    if L < 3:
        raise CoverError("N=2 needs L >= 3 for acute sectors")
    if beta < 0:
        raise CoverError("beta must be nonnegative")
    a0 = float(np.arctan2(xi0[1], xi0[0]))
    w = TWO_PI / L
    cones, duals, cs = [], [], []
    for j in range(L):
        lo = a0 - w / 2 + j * w
        cones.append(Cone(2, 0, lo, lo + w))
        if j == 0:
            b = beta
            if w / 2 + b >= np.pi / 2:
                raise CoverError("beta too large for the dual-cone inequality")
            centre = a0
            cj = np.cos(w / 2 + b)
        else:
            # relative to a0: C_j = [r1, r2]
            r1, r2 = lo - a0, lo + w - a0
            f_lo, f_hi = max(r2 - np.pi / 2, np.pi / 2), min(r1 + np.pi / 2, 3 * np.pi / 2)
            if f_hi <= f_lo:
                raise CoverError(f"no opposite dual cone exists for C_{j + 1}")
            b = min(beta, 0.45 * (f_hi - f_lo))
            mid = 0.5 * (f_lo + f_hi)
            centre = a0 + mid
            cj = np.cos(max(mid + b - r1, r2 - (mid - b)))
        # open sector, so a zero half-angle is widened to a sliver for sampling
        bb = max(b, 1e-9)
        duals.append(Cone(2, 0, centre - bb, centre + bb))
        cs.append(float(cj))
    cover = CoverSpec(cones, duals, float(min(cs)), xi0, x0, a, beta, cs)
    validate_cover(cover, seed=seed)
    return cover


def cover_from_descriptor(d, seed=0):
    return build_cover(int(d["N"]), int(d.get("L", 2)), d["xi0"], float(d.get("beta", 0.1)),
                       d.get("x0"), d.get("a"), seed)


def default_radius(mu, x0):
    """a = 1/4 of the distance from x0 to the boundary of the carrier.

    For carriers without interior around x0 (points) the default ball
    B_{1/4}(x0) is used.
    """
    d = mu.carrier.boundary_distance(x0)
    return d / 4 if d > 0 else 0.25


def jacobian_delta(w, theta):
    """det(I + i w (x) theta) for the map xi -> xi + i|xi| w, theta = xi/|xi|."""
    w = np.asarray(w, dtype=complex)
    theta = np.asarray(theta, dtype=float)
    N = w.shape[-1]
    M = np.eye(N) + 1j * w[..., :, None] * theta[..., None, :]
    return np.linalg.det(M)


# ---------------------------------------------------------------- quadrature helpers

PROBE = 2.0 ** np.arange(-2, 16.5, 0.5)
CHUNK = 32


def _ball_nodes(x0, a, N, n=24):
    if N == 1:
        t, w = panel_nodes(np.linspace(x0[0] - a, x0[0] + a, n // 12 + 1), 12)
        return t[:, None], w
    rho, wr = panel_nodes(np.array([0.0, a]), 12)
    m = 20
    ang = TWO_PI * np.arange(m) / m
    R, A = np.meshgrid(rho, ang, indexing="ij")
    pts = np.stack([x0[0] + R * np.cos(A), x0[1] + R * np.sin(A)], -1).reshape(-1, 2)
    wts = (np.outer(wr * rho, np.full(m, TWO_PI / m))).ravel()
    return pts, wts


class _DirectionCone:
    """A single direction, used for angular trapezoid sums."""
    N = 2

    def __init__(self, d):
        self.d = d


def _cone_directions(cone, n_ang):
    if isinstance(cone, _DirectionCone):
        return cone.d[None, :], np.array([1.0])
    if cone.N == 1:
        return np.array([[float(cone.sign)]]), np.array([1.0])
    a, wa = panel_nodes(np.linspace(cone.lo, cone.hi, 3), n_ang // 2)
    return np.stack([np.cos(a), np.sin(a)], 1), wa


def _radial_nodes(rho_max, k, span, order=12):
    """Gauss nodes on (0, rho_max] in u = rho^{1/2k}; returns rho and d rho weights.

    Panels carry at most 2 pi of the oscillation rho * span.
    """
    m = 2 * k
    n = int(np.ceil(span * rho_max / (2 * np.pi))) + 6
    u_edges = np.linspace(0.0, rho_max, n + 1) ** (1.0 / m)
    u, wu = panel_nodes(u_edges, order)
    return u ** m, wu * m * u ** (m - 1)


class _Acc:
    """Running sum of mant * exp(log) without overflow."""

    def __init__(self):
        self.L = -np.inf
        self.S = 0j

    def add(self, logs, mants):
        live = np.isfinite(logs) & (mants != 0)
        if not np.any(live):
            return
        Lc = float(np.max(logs[live]))
        with np.errstate(under="ignore"):
            Sc = complex(np.sum(mants[live] * np.exp(logs[live] - Lc)))
        if Lc > self.L:
            self.S = self.S * np.exp(self.L - Lc) if np.isfinite(self.L) else 0j
            self.L = Lc
        else:
            Sc *= np.exp(Lc - self.L)
        self.S += Sc

    @property
    def value(self):
        return self.S * np.exp(self.L) if np.isfinite(self.L) else 0j


def _block_logs(mu, p, taus, terms, rho):
    """log-modulus and unit phase of the integrand on a tau chunk."""
    dirs, E, M0 = terms(taus, rho)
    m, l, ok = fbi_rays(mu, p, taus, dirs, rho)
    with np.errstate(divide="ignore"):
        lm0 = np.log(np.abs(M0))
    logs = l + E.real + lm0[..., None]
    mants = m * np.exp(1j * E.imag) * np.where(M0 != 0, M0 / np.where(M0 != 0, np.abs(M0), 1), 0)[..., None]
    return logs, mants, ok


def _rho_cut(mu, p, taus, terms, settle=4):
    """Radius past which the integrand stays below e^{-CUTOFF} of its peak.

    The probe walks outward and stops once `settle` consecutive probe radii
    (a factor 2^{settle/2} in rho) sit below the threshold while decreasing.
    """
    sub = taus[:: max(1, len(taus) // 8)]
    lm = np.empty(0)
    for s in range(0, len(PROBE), settle):
        logs, _, _ = _block_logs(mu, p, sub, terms, PROBE[s:s + settle])
        lm = np.concatenate([lm, np.max(logs.reshape(-1, logs.shape[-1]), axis=0)])
        peak = np.max(lm)
        tail = lm[-settle:]
        if len(lm) > settle and np.all(tail < peak - CUTOFF) and np.all(np.diff(tail) < 0):
            break
    below = lm < np.max(lm) - CUTOFF
    for i in range(len(lm)):
        if np.all(below[i:]):
            return float(PROBE[i])
    raise DivergenceError("integrand does not decay along the cone (no damping at this z)")


def _integrate(mu, p, taus, twts, terms, rho, wr):
    acc = _Acc()
    valid = True
    for s in range(0, len(taus), CHUNK):
        tch = taus[s:s + CHUNK]
        logs, mants, ok = _block_logs(mu, p, tch, terms, rho)
        logs = logs + np.log(twts[s:s + CHUNK])[:, None, None] + np.log(wr)[None, None, :]
        valid &= bool(np.all(ok))
        acc.add(logs, mants)
    return acc.value, valid


def _span(mu, cover, taus, z, a):
    """Bound on the rho-frequency of the integrand: |x - tau| from the exponent, |tau - w| from F."""
    z = np.atleast_2d(z)
    dx = float(np.max(np.abs(z.real[:, None, :] - taus[None])))
    far = max(float(np.linalg.norm(np.array(c) - cover.x0)) for c in _corners(mu.carrier)) + a
    return dx * (1.0 + 2.0 * float(np.max(np.abs(z.imag)))) + far + 0.5


def _corners(box):
    return itertools.product(*box.intervals)


# ---------------------------------------------------------------- F_1

class F1Evaluator:
    """F_1 on a fixed node set, so that it is an exact finite sum of exponentials in z.

    F_1(z) = (2 pi)^{-N} int_{|tau-x0|<=a} int_{C_1} e^{i xi (z - tau)} F(tau, xi) |xi|^{N/2k} dxi dtau.
    The radial cut is chosen once for the worst point of zs.
    """

    def __init__(self, mu, p, cover, zs, n_ang=24):
        N = p.N
        self.N = N
        a = cover.a if cover.a is not None else default_radius(mu, cover.x0)
        self.a = a
        zs = np.asarray(zs, dtype=complex).reshape(-1, N)
        taus, wt = _ball_nodes(cover.x0, a, N)
        dirs, wd = _cone_directions(cover.cones[0], n_ang)
        grow = float(np.max(-(zs.imag @ dirs.T)))
        lw = (N - 1) + N / (2 * p.k)

        def terms(tch, rho):
            E = np.broadcast_to((rho * grow + lw * np.log(rho))[None, None, :], (len(tch), len(dirs), len(rho)))
            return dirs, E.astype(complex), np.broadcast_to(wd, (len(tch), len(dirs)))

        rho_max = _rho_cut(mu, p, taus, terms)
        rho, wr = _radial_nodes(rho_max, p.k, _span(mu, cover, taus, zs, a))
        self.taus, self.dirs, self.rho = taus, dirs, rho
        logs, mants, ok = _block_logs(mu, p, taus, lambda t, r: (dirs, np.broadcast_to(
            (lw * np.log(r))[None, None, :], (len(t), len(dirs), len(r))).astype(complex),
            np.broadcast_to(wd, (len(t), len(dirs)))), rho)
        if not np.all(ok):
            raise TransformError("FBI quadrature failed on the F_1 node set")
        self.logs = logs + np.log(wt)[:, None, None] + np.log(wr)[None, None, :]
        self.mants = mants
        self.rho_max = rho_max

    def __call__(self, z):
        z = np.asarray(z, dtype=complex).reshape(self.N)
        w = z[None, :] - self.taus                          # (T, N)
        ex = 1j * (w @ self.dirs.T)[..., None] * self.rho   # (T, D, K)
        acc = _Acc()
        acc.add(self.logs + ex.real, self.mants * np.exp(1j * ex.imag))
        return acc.value / TWO_PI ** self.N


def piece_F1(mu, p, cover, z):
    """F_1 at z (one point, or an array of points sharing one node set)."""
    zs = np.asarray(z, dtype=complex).reshape(-1, p.N)
    ev = F1Evaluator(mu, p, cover, zs)
    vals = np.array([ev(zz) for zz in zs])
    return vals[0] if len(vals) == 1 else vals


def cr_residuals(mu, p, cover, z0, steps):
    """Centred-difference residual |d_y F_1 - i d_x F_1| for each step, on one node set (N = 1)."""
    if p.N != 1:
        raise ValueError("CR residuals are implemented for N = 1")
    z0 = complex(np.ravel(z0)[0])
    pts = [z0]
    for h in steps:
        pts += [z0 + h, z0 - h, z0 + 1j * h, z0 - 1j * h]
    ev = F1Evaluator(mu, p, cover, np.array(pts))
    out = []
    for h in steps:
        fx = (ev(z0 + h) - ev(z0 - h)) / (2 * h)
        fy = (ev(z0 + 1j * h) - ev(z0 - 1j * h)) / (2 * h)
        out.append(abs(fy - 1j * fx))
    return np.array(out), abs(ev(z0))


# ---------------------------------------------------------------- f_j and R_j

def _fj_terms(p, z, dirs, wd, eps):
    N = p.N
    lw = (N - 1) + N / (2 * p.k)

    def terms(tch, rho):
        w = z[None, :] - tch                                 # (T, N)
        zd = dirs[None, :, :] + 1j * w[:, None, :]           # zeta' / |xi|
        bz = bracket_rows(zd)
        lin = 1j * (w @ dirs.T) - np.sum(w * w, 1)[:, None]  # (T, D)
        E = (rho * lin[..., None] - eps * rho ** 2 * np.sum(zd * zd, -1)[..., None]
             + (N / (2 * p.k)) * np.log(bz)[..., None] + lw * np.log(rho))
        M0 = jacobian_delta(w[:, None, :], dirs[None, :, :]) * wd[None, :]
        return zd, E, M0
    return terms


def _fj_integral(mu, p, cover, cone, z, a, eps=0.0, n_ang=24, taus=None, dirs=None):
    z = np.asarray(z, dtype=complex).reshape(p.N)
    taus, wt = taus if taus is not None else _ball_nodes(cover.x0, a, p.N)
    d, wd = dirs if dirs is not None else _cone_directions(cone, n_ang)
    terms = _fj_terms(p, z, d, wd, eps)
    rho, wr = _radial_nodes(_rho_cut(mu, p, taus, terms), p.k, _span(mu, cover, taus, z, a))
    val, ok = _integrate(mu, p, taus, wt, terms, rho, wr)
    return val / TWO_PI ** p.N, ok


def _boundary_rays(cover):
    """(direction, orientation, neighbouring cone index) for the rays of dC_1 (N = 2)."""
    C1 = cover.cones[0]
    e_lo = np.array([np.cos(C1.lo), np.sin(C1.lo)])
    e_hi = np.array([np.cos(C1.hi), np.sin(C1.hi)])
    # counter-clockwise boundary: in along hi, out along lo
    return [(e_lo, 1.0, cover.L - 1), (e_hi, -1.0, 1)]


def _R_terms(p, z, e, sign, t_nodes, t_w):
    N = p.N

    def terms(tch, rho):
        w = z[None, :] - tch
        zd = e[None, None, :] + 1j * t_nodes[None, :, None] * w[:, None, :]   # (T, nt, N)
        bz = bracket_rows(zd)
        E = (1j * rho * np.sum(zd * w[:, None, :], -1)[..., None]
             + (N / (2 * p.k)) * (np.log(bz)[..., None] + np.log(rho)) + np.log(rho))
        # det[d zeta/ds, d zeta/dt] = i s det[e, w]
        M0 = sign * 1j * (e[0] * w[:, 1] - e[1] * w[:, 0])[:, None] * t_w[None, :]
        return zd, E, M0
    return terms


def _R_ray(mu, p, cover, z, a, e, sign, taus, order=12, t_panels=4):
    t_nodes, t_w = panel_nodes(np.linspace(0.0, 1.0, t_panels + 1), order)
    terms = _R_terms(p, z, e, sign, t_nodes, t_w)
    s, ws = _radial_nodes(_rho_cut(mu, p, taus[0], terms), p.k, _span(mu, cover, taus[0], z, a), order)
    val, ok = _integrate(mu, p, taus[0], taus[1], terms, s, ws)
    return val / TWO_PI ** p.N, ok


def piece_fj_and_Rj(mu, p, cover, j, z, eps=0.0, a=None):
    """(f_j(z), R_j(z), valid) for the 1-based cone index j.

    R_j is carried by the part of dC_1 lying in the closure of C_j, so for
    j >= 2 only the cones adjacent to C_1 get a nonzero R_j; R_1 runs over
    all of dC_1.  In N = 1 the boundary of C_1 is a point and R = 0.
    """
    if not 1 <= j <= cover.L:
        raise CoverError("cone index out of range")
    a = a if a is not None else (cover.a if cover.a is not None else default_radius(mu, cover.x0))
    z = np.asarray(z, dtype=complex).reshape(p.N)
    taus = _ball_nodes(cover.x0, a, p.N)
    f, vf = _fj_integral(mu, p, cover, cover.cones[j - 1], z, a, eps, taus=taus)
    if p.N == 1:
        return f, 0j, vf
    R, vr = piece_Rj(mu, p, cover, j, z, a)
    return f, R, vf and vr


def piece_Rj(mu, p, cover, j, z, a=None):
    """R_j(z) alone; it converges on the convex hull of Gamma_1 and Gamma_j."""
    if p.N == 1:
        return 0j, True
    a = a if a is not None else (cover.a if cover.a is not None else default_radius(mu, cover.x0))
    z = np.asarray(z, dtype=complex).reshape(p.N)
    taus = _ball_nodes(cover.x0, a, p.N)
    R, vr = 0j, True
    for e, sign, nb in _boundary_rays(cover):
        if j == 1 or nb == j - 1:
            val, ok = _R_ray(mu, p, cover, z, a, e, sign, taus)
            R += val
            vr &= ok
    return R, vr


def R1_single_parametrization(mu, p, cover, z, a=None, order=16):
    """R_1 with one parameter sigma: in along the hi ray, then out along the lo ray.

    Independent of the per-ray R_j evaluation in its node layout (order,
    t-panels) and in how the orientation enters: through d zeta/d sigma.
    """
    if p.N == 1:
        return 0j
    a = a if a is not None else (cover.a if cover.a is not None else default_radius(mu, cover.x0))
    z = np.asarray(z, dtype=complex).reshape(p.N)
    taus = _ball_nodes(cover.x0, a, p.N)
    C1 = cover.cones[0]
    total = 0j
    for ang, dsig in ((C1.hi, -1.0), (C1.lo, 1.0)):
        # zeta(sigma) = |sigma| (e + i t w); d zeta / d sigma = sign(sigma) (e + i t w)
        e = np.array([np.cos(ang), np.sin(ang)])
        val, _ = _R_ray(mu, p, cover, z, a, e, dsig, taus, order=order, t_panels=3)
        total += val
    return total


# ---------------------------------------------------------------- additivity

def cone_split_additivity(mu, p, cover, z, eps=1e-2, a=None):
    """Sum over cones of the f_j integrand against one full-space integral.

    Both sides carry the damping e^{-eps <zeta'>^2}.  In N = 2 the full
    integral is a periodic trapezoid rule in the angle; in N = 1 the two
    half-lines are the whole space.
    """
    a = a if a is not None else (cover.a if cover.a is not None else default_radius(mu, cover.x0))
    z = np.asarray(z, dtype=complex).reshape(p.N)
    taus = _ball_nodes(cover.x0, a, p.N)
    parts = [_fj_integral(mu, p, cover, C, z, a, eps, taus=taus)[0] for C in cover.cones]
    total = complex(sum(parts))
    if p.N == 1:
        full = complex(sum(_fj_integral(mu, p, cover, C, z, a, eps, taus=taus)[0]
                           for C in (Cone(1, 1), Cone(1, -1))))
    else:
        m = 96
        ang = cover.cones[0].lo + TWO_PI * np.arange(m) / m
        d = np.stack([np.cos(ang), np.sin(ang)], 1)
        full = complex(_fj_integral(mu, p, cover, None, z, a, eps, taus=taus,
                                    dirs=(d, np.full(m, TWO_PI / m)))[0])
    res = abs(total - full)
    return {"sum_over_cones": total, "full_space": full, "residual": res,
            "relative_residual": res / max(abs(full), 1e-300), "eps": eps, "a": a,
            "per_cone": parts}


# ---------------------------------------------------------------- cross-check

def fj_inversion_check(mu, p, cover, z, eps=1e-6, xi_max=None):
    """f_1 + f_2 at a real point (N = 1) against the localized inversion integral mu_0^eps."""
    if p.N != 1:
        raise ValueError("the inversion cross-check is implemented for N = 1")
    a = cover.a if cover.a is not None else default_radius(mu, cover.x0)
    taus = _ball_nodes(cover.x0, a, 1)
    f = sum(_fj_integral(mu, p, cover, C, [z], a, 0.0, taus=taus)[0] for C in cover.cones)
    ball = [[cover.x0[0] - a, cover.x0[0] + a]]
    (ca, cb), = mu.carrier.intervals
    W = [[min(ca, ball[0][0]) - 1.0, max(cb, ball[0][1]) + 1.0]]
    inv = invert(mu, p, eps, [float(np.real(np.ravel(z)[0]))], W, tau_box=ball, xi_max=xi_max)
    g = complex(inv.evaluation[0])
    return {"f_sum": complex(f), "mu0_eps": g, "abs_diff": abs(f - g),
            "rel_diff": abs(f - g) / max(abs(g), 1e-300), "eps": eps, "a": a}


def as_tau_box(x0, a):
    return as_box([[x - a, x + a] for x in np.atleast_1d(x0)])
