"""Analytic functionals carried by real boxes, and entire test functions.

Three concrete representations are supported:

    Density        h -> int_box f h
    PointCombo     h -> sum_i c_i (d^alpha_i h)(x_i)
    WedgeBoundary  h -> int_{V + iy} g h dz

plus two internal combinators: finite linear combinations, and the image of
a functional under the transpose of a differential operator.  Test
functions are sympy expressions evaluated through numpy, so derivatives of
any order are exact.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline

ORDER_CAP = 2
GL_ORDER = 12


class FunctionalError(ValueError):
    pass


def wsyms(N):
    return sp.symbols(f"w1:{N + 1}")


def gauss(n):
    return np.polynomial.legendre.leggauss(n)


def composite_nodes(a, b, n_panels, order=GL_ORDER):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    x, w = gauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def panel_nodes(edges, order=GL_ORDER):
    x, w = gauss(order)
    edges = np.asarray(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


# ---------------------------------------------------------------- test functions

class TestFunction:
    """Entire function of w in C^N with exact derivatives."""

    __test__ = False

    def __init__(self, expr, N, label=None):
        self.N = int(N)
        self.expr = sp.sympify(expr)
        self.label = label or str(self.expr)
        self._f = None

    def _fn(self):
        if self._f is None:
            self._f = sp.lambdify(wsyms(self.N), self.expr, "numpy")
        return self._f

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        if self.N == 1 and (w.ndim == 0 or w.shape[-1] != 1):
            w = w[..., None]
        args = [w[..., j] for j in range(self.N)]
        out = self._fn()(*args)
        return np.broadcast_to(np.asarray(out, dtype=complex), w.shape[:-1]).copy()

    def derivative(self, alpha):
        alpha = tuple(alpha)
        if not any(alpha):
            return self
        return _derivative_cached(self, alpha)

    def __add__(self, other):
        return TestFunction(self.expr + _as_expr(other), self.N)

    def __mul__(self, other):
        return TestFunction(self.expr * _as_expr(other), self.N)

    __rmul__ = __mul__

    def __repr__(self):
        return f"TestFunction({self.label})"


def _as_expr(o):
    return o.expr if isinstance(o, TestFunction) else sp.sympify(o)


@lru_cache(maxsize=512)
def _deriv_expr(expr, N, alpha):
    ws = wsyms(N)
    out = expr
    for j, a in enumerate(alpha):
        if a:
            out = sp.diff(out, ws[j], a)
    return out


def _derivative_cached(h, alpha):
    return TestFunction(_deriv_expr(h.expr, h.N, alpha), h.N, label=f"d{alpha} {h.label}")


def polynomial_test(coeffs, N=1):
    """sum c w^beta from {beta: c} or, for N = 1, a coefficient list."""
    ws = wsyms(N)
    if isinstance(coeffs, dict):
        items = coeffs.items()
    else:
        items = (((j,), c) for j, c in enumerate(coeffs))
    expr = sum(sp.nsimplify(c) * sp.Mul(*[x ** b for x, b in zip(ws, beta)]) for beta, c in items)
    return TestFunction(expr, N)


def named_test(name, N=1, **params):
    ws = wsyms(N)
    s = sum(ws)
    a = sp.nsimplify(params.get("a", 1))
    table = {
        "one": sp.Integer(1),
        "w": s,
        "w2": s ** 2,
        "exp": sp.exp(a * s),
        "cos": sp.cos(a * s),
        "sin": sp.sin(a * s),
    }
    if name not in table:
        raise FunctionalError(f"unknown test function {name!r}")
    return TestFunction(table[name], N, label=name)


def fbi_kernel_test(p, tau, xi):
    """w -> exp(i (tau - w) xi - |xi| p(tau - w)) with fixed tau, xi."""
    ws = wsyms(p.N)
    tau = np.atleast_1d(tau).astype(float)
    xi = np.atleast_1d(xi).astype(float)
    r = float(np.linalg.norm(xi))
    d = [sp.Float(t) - w for t, w in zip(tau, ws)]
    phase = sp.I * sum(di * sp.Float(x) for di, x in zip(d, xi)) - sp.Float(r) * p.sympy_expr(d)
    return TestFunction(sp.exp(phase), p.N, label=f"fbi kernel tau={tau} xi={xi}")


# ---------------------------------------------------------------- boxes

@dataclass(frozen=True)
class CompactBox:
    intervals: tuple

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        if not iv:
            raise FunctionalError("empty box")
        for a, b in iv:
            if not (np.isfinite(a) and np.isfinite(b)) or a > b:
                raise FunctionalError(f"bad interval {(a, b)}")
        object.__setattr__(self, "intervals", iv)

    @property
    def N(self):
        return len(self.intervals)

    @property
    def volume(self):
        return float(np.prod([b - a for a, b in self.intervals]))

    def contains(self, x, margin=0.0):
        x = np.atleast_1d(x)
        return all(a - margin <= xi <= b + margin for xi, (a, b) in zip(x, self.intervals))

    def hull(self, other):
        return CompactBox(tuple((min(a, c), max(b, d)) for (a, b), (c, d)
                                in zip(self.intervals, other.intervals)))

    def distance(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = [max(a - xi, 0.0, xi - b) for xi, (a, b) in zip(x, self.intervals)]
        return float(np.sqrt(np.sum(np.square(d))))

    def boundary_distance(self, x):
        """Distance from an interior point to the complement."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.contains(x):
            return 0.0
        return float(min(min(xi - a, b - xi) for xi, (a, b) in zip(x, self.intervals)))

    def to_list(self):
        return [list(iv) for iv in self.intervals]


def as_box(b):
    return b if isinstance(b, CompactBox) else CompactBox(tuple(tuple(iv) for iv in b))


# ---------------------------------------------------------------- profiles

class Profile:
    """Density profile on a box; numeric evaluation at complex points."""

    kind = "expr"

    def __init__(self, expr, N, kind="expr", spec=None):
        self.N = N
        self.expr = sp.sympify(expr)
        self.kind = kind
        self.spec = spec
        self._f = sp.lambdify(wsyms(N), self.expr, "numpy")

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        out = self._f(*[w[..., j] for j in range(self.N)])
        return np.broadcast_to(np.asarray(out, dtype=complex), w.shape[:-1])

    def pieces(self, box):
        """Sub-boxes on which the profile is entire (one for closed forms)."""
        return [(box, self)]

    def sup_abs(self, box, n=201):
        grids = [np.linspace(a, b, n if self.N == 1 else 41) for a, b in box.intervals]
        pts = np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, self.N)
        return float(np.max(np.abs(self(pts))))

    def to_dict(self):
        return self.spec if self.spec is not None else {"kind": "expr", "expr": str(self.expr)}


class SampledProfile(Profile):
    """Piecewise-cubic interpolant of samples (N = 1, not-a-knot spline)."""

    kind = "samples"

    def __init__(self, nodes, values, spec=None):
        self.N = 1
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.nodes) < 4 or np.any(np.diff(self.nodes) <= 0):
            raise FunctionalError("samples need >= 4 strictly increasing nodes")
        self.spline = CubicSpline(self.nodes, self.values)
        self.spec = spec or {"kind": "samples", "nodes": self.nodes.tolist(),
                             "values": self.values.tolist()}
        self.expr = None

    def _piece(self, i):
        c = self.spline.c[:, i]
        x0 = self.nodes[i]

        class _Poly(Profile):
            def __init__(s):
                s.N = 1
                s.kind = "piece"

            def __call__(s, w):
                w = np.asarray(w, dtype=complex)[..., 0] - x0
                return ((c[0] * w + c[1]) * w + c[2]) * w + c[3]
        return _Poly()

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        x = w[..., 0]
        if np.any(np.abs(x.imag) > 0):
            raise FunctionalError("sampled profiles are evaluated piecewise off the real axis")
        return self.spline(x.real).astype(complex)

    def pieces(self, box):
        (a, b), = box.intervals
        out = []
        for i in range(len(self.nodes) - 1):
            lo, hi = max(a, self.nodes[i]), min(b, self.nodes[i + 1])
            if hi > lo:
                out.append((CompactBox(((lo, hi),)), self._piece(i)))
        return out


def make_profile(d, N):
    kind = d.get("kind")
    ws = wsyms(N)
    if kind == "const":
        return Profile(sp.nsimplify(d["value"]), N, "const", d)
    if kind == "poly":
        expr = sum(sp.nsimplify(m["c"]) * sp.Mul(*[x ** b for x, b in zip(ws, m["beta"])])
                   for m in d["monomials"])
        return Profile(expr, N, "poly", d)
    if kind == "expr":
        loc = {f"x{j + 1}": ws[j] for j in range(N)}
        loc.update({f"w{j + 1}": ws[j] for j in range(N)})
        if N == 1:
            loc["x"] = ws[0]
        return Profile(sp.sympify(d["expr"], locals=loc), N, "expr", d)
    if kind == "samples":
        if N != 1:
            raise FunctionalError("sampled profiles are supported for N = 1 only")
        return SampledProfile(d["nodes"], d["values"], d)
    raise FunctionalError(f"unknown profile kind {kind!r}")


# ---------------------------------------------------------------- functionals

class Functional:
    variant = "abstract"
    N = 1

    def apply(self, h):
        raise NotImplementedError

    def __call__(self, h):
        return self.apply(h)

    def __add__(self, other):
        return Combination([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return Combination([(1.0, self), (-1.0, other)])

    def __mul__(self, a):
        return Combination([(complex(a) if np.iscomplexobj(a) else float(a), self)])

    __rmul__ = __mul__

    def __neg__(self):
        return Combination([(-1.0, self)])


class Density(Functional):
    variant = "density"

    def __init__(self, support, profile):
        self.support = as_box(support)
        self.N = self.support.N
        if isinstance(profile, dict):
            profile = make_profile(profile, self.N)
        elif not isinstance(profile, Profile):
            profile = Profile(sp.nsimplify(profile), self.N, "const", {"kind": "const", "value": float(profile)})
        self.profile = profile
        self.carrier = self.support

    def quad_nodes(self, panels=64, order=GL_ORDER):
        """Tensor nodes on each entire piece: list of (points, weights, profile)."""
        out = []
        for box, prof in self.profile.pieces(self.support):
            axes = [composite_nodes(a, b, panels, order) for a, b in box.intervals]
            pts = np.stack(np.meshgrid(*[x for x, _ in axes], indexing="ij"), -1).reshape(-1, self.N)
            wts = np.prod(np.stack(np.meshgrid(*[w for _, w in axes], indexing="ij"), -1), -1).ravel()
            out.append((pts, wts, prof))
        return out

    def apply(self, h, panels=64):
        total = 0j
        for pts, wts, prof in self.quad_nodes(panels):
            total += np.sum(wts * prof(pts) * h(pts))
        return complex(total)

    def to_dict(self):
        return {"variant": "density", "support": self.support.to_list(), "profile": self.profile.to_dict()}

    def __repr__(self):
        return f"Density({self.support.intervals}, {self.profile.to_dict()})"


@dataclass(frozen=True)
class Atom:
    x: tuple
    alpha: tuple
    c: complex


class PointCombo(Functional):
    """sum_i c_i (d^alpha_i h)(x_i); direct derivatives, no sign factor."""

    variant = "points"

    def __init__(self, atoms, carrier=None, order_cap=ORDER_CAP):
        clean = []
        for a in atoms:
            if isinstance(a, dict):
                x = np.atleast_1d(a["x"]).astype(float)
                a = Atom(tuple(x), tuple(int(v) for v in np.atleast_1d(a.get("alpha", [0] * len(x)))),
                         complex(a.get("c", 1.0)))
            elif not isinstance(a, Atom):
                x, alpha, c = a
                a = Atom(tuple(np.atleast_1d(x).astype(float)), tuple(np.atleast_1d(alpha).astype(int)), complex(c))
            clean.append(a)
        if not clean:
            raise FunctionalError("point combination needs at least one atom")
        self.N = len(clean[0].x)
        for a in clean:
            if len(a.x) != self.N or len(a.alpha) != self.N:
                raise FunctionalError("atom dimension mismatch")
            if sum(a.alpha) > order_cap:
                raise FunctionalError(f"derivative order {sum(a.alpha)} exceeds cap {order_cap}")
        self.atoms = tuple(clean)
        self.order_cap = order_cap
        xs = np.array([a.x for a in clean])
        tight = CompactBox(tuple(zip(xs.min(0), xs.max(0))))
        if carrier is None:
            carrier = tight
        carrier = as_box(carrier)
        if not all(carrier.contains(a.x) for a in clean):
            raise FunctionalError("atoms must lie inside the carrier")
        self.carrier = carrier

    def apply(self, h):
        total = 0j
        for a in self.atoms:
            total += a.c * complex(h.derivative(a.alpha)(np.array(a.x, dtype=complex)))
        return complex(total)

    def to_dict(self):
        atoms = []
        for a in self.atoms:
            c = a.c
            atoms.append({"x": list(a.x), "alpha": list(a.alpha),
                          "c": c.real if c.imag == 0 else [c.real, c.imag]})
        return {"variant": "points", "atoms": atoms}

    def __repr__(self):
        return f"PointCombo({[(a.x, a.alpha, a.c) for a in self.atoms]})"


def delta(x0=0.0, c=1.0, N=None):
    x0 = np.atleast_1d(x0).astype(float)
    return PointCombo([Atom(tuple(x0), (0,) * len(x0), complex(c))])


# named holomorphic g for wedge boundary values; "half" marks functions that
# are only holomorphic off the real axis (the wedge side must not be crossed)
WEDGE_G = {
    "reciprocal": (lambda ws: 1 / ws[0], 1, True),
    "log": (lambda ws: sp.log(ws[0]), 1, True),
    "one": (lambda ws: sp.Integer(1), None, False),
    "exp": (lambda ws: sp.exp(sum(ws)), None, False),
}


class WedgeBoundary(Functional):
    """h -> int_{V + iy} g(z) h(z) dz at a fixed height y."""

    variant = "wedge"

    def __init__(self, g, V, y, carrier=None, delta=None):
        self.V = as_box(V)
        self.N = self.V.N
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        if len(self.y) != self.N:
            raise FunctionalError("height y must match the dimension")
        if not np.any(self.y):
            raise FunctionalError("wedge height must be nonzero")
        if g not in WEDGE_G:
            raise FunctionalError(f"unknown wedge function {g!r}")
        make, dim, half = WEDGE_G[g]
        if dim is not None and dim != self.N:
            raise FunctionalError(f"{g!r} is defined for N = {dim}")
        self.g = g
        self.half_plane = half
        ws = wsyms(self.N)
        self.g_expr = make(ws)
        self._g = sp.lambdify(ws, self.g_expr, "numpy")
        self.delta = float(delta) if delta is not None else max(1.0, 100 * float(np.max(np.abs(self.y))))
        if np.max(np.abs(self.y)) >= self.delta:
            raise FunctionalError("wedge height must stay below delta")
        self.carrier = as_box(carrier) if carrier is not None else self.V
        for (a, b), (c, d) in zip(self.V.intervals, self.carrier.intervals):
            if a < c or b > d:
                raise FunctionalError("V must lie inside the carrier")

    def g_values(self, z):
        z = np.asarray(z, dtype=complex)
        out = self._g(*[z[..., j] for j in range(self.N)])
        return np.broadcast_to(np.asarray(out, dtype=complex), z.shape[:-1])

    def features(self):
        """Real parts of singular points near the contour (for panel grading)."""
        if self.g in ("reciprocal", "log"):
            return [0.0]
        return []

    def shift_bounds(self):
        """Allowed extra imaginary offsets per coordinate for contour moves."""
        out = []
        for yj in self.y:
            if not self.half_plane:
                out.append((-np.inf, np.inf))
            elif yj > 0:
                out.append((-yj, np.inf))
            else:
                out.append((-np.inf, -yj))
        return out

    def apply(self, h, order=GL_ORDER):
        axes = []
        for (a, b), yj in zip(self.V.intervals, self.y):
            edges = graded_edges(a, b, self.features() if self.N == 1 else [], abs(yj))
            x, w = panel_nodes(edges, order)
            axes.append((x + 1j * yj, w))
        pts = np.stack(np.meshgrid(*[x for x, _ in axes], indexing="ij"), -1).reshape(-1, self.N)
        wts = np.prod(np.stack(np.meshgrid(*[w for _, w in axes], indexing="ij"), -1), -1).ravel()
        return complex(np.sum(wts * self.g_values(pts) * h(pts)))

    def with_height(self, y):
        return WedgeBoundary(self.g, self.V, y, self.carrier, self.delta)

    def to_dict(self):
        return {"variant": "wedge", "g": self.g, "V": self.V.to_list(), "y": self.y.tolist()}

    def __repr__(self):
        return f"WedgeBoundary({self.g}, V={self.V.intervals}, y={self.y.tolist()})"


def graded_edges(a, b, features, scale, base_panels=32):
    """Panel edges on [a, b], geometrically refined towards feature points.

    Near a feature x_f the panels shrink to ~scale/2 so that integrands like
    1/(x - x_f + i scale) are resolved.
    """
    edges = set(np.linspace(a, b, base_panels + 1).tolist())
    for f in features:
        if not a - scale < f < b + scale:
            continue
        d = max(scale, 1e-12) / 2
        while d < (b - a):
            for e in (f - d, f + d):
                if a < e < b:
                    edges.add(e)
            d *= 1.5
        if a < f < b:
            edges.add(f)
    return np.array(sorted(edges))


class Combination(Functional):
    """Finite linear combination sum a_i mu_i."""

    variant = "combination"

    def __init__(self, parts):
        flat = []
        for a, mu in parts:
            if isinstance(mu, Combination):
                flat.extend((a * b, nu) for b, nu in mu.parts)
            else:
                flat.append((a, mu))
        if not flat:
            raise FunctionalError("empty combination")
        self.parts = tuple(flat)
        self.N = flat[0][1].N
        car = flat[0][1].carrier
        for _, mu in flat[1:]:
            if mu.N != self.N:
                raise FunctionalError("dimension mismatch in combination")
            car = car.hull(mu.carrier)
        self.carrier = car

    def apply(self, h):
        return complex(sum(a * mu.apply(h) for a, mu in self.parts))

    def to_dict(self):
        return {"variant": "combination",
                "parts": [{"a": a if not isinstance(a, complex) else [a.real, a.imag],
                           "functional": mu.to_dict()} for a, mu in self.parts]}


class TransposedTest(TestFunction):
    """w -> sum_beta b_beta(w) (d^beta h)(w) for a symbolic or numeric h."""

    def __init__(self, btab, h):
        self.N = h.N
        self.btab = btab
        self.h = h
        self.label = f"P^t {h.label}"
        if getattr(h, "expr", None) is not None:
            self.expr = sum(b * _deriv_expr(h.expr, self.N, beta) for beta, b in btab)
            self._f = None
        else:
            self.expr = None

    def __call__(self, w):
        if self.expr is not None:
            return TestFunction.__call__(self, w)
        w = np.asarray(w, dtype=complex)
        ws = wsyms(self.N)
        out = 0
        for beta, b in self.btab:
            bf = sp.lambdify(ws, b, "numpy")
            bv = bf(*[w[..., j] for j in range(self.N)])
            out = out + bv * self.h.derivative(beta)(w)
        return out

    def derivative(self, alpha):
        if self.expr is not None:
            return TestFunction(_deriv_expr(self.expr, self.N, tuple(alpha)), self.N)
        raise FunctionalError("derivatives of numeric transposed tests are not supported")


class TransposedImage(Functional):
    """The functional h -> mu(P^t h), i.e. P applied to mu.

    btab lists (beta, b_beta) with P^t h = sum_beta b_beta d^beta h; the
    b_beta are sympy expressions in w1..wN.
    """

    variant = "operator_image"

    def __init__(self, base, btab, label="P"):
        self.base = base
        self.N = base.N
        self.btab = tuple((tuple(beta), sp.sympify(b)) for beta, b in btab)
        self.carrier = base.carrier
        self.label = label

    def apply(self, h):
        return self.base.apply(TransposedTest(self.btab, h))

    def to_dict(self):
        return {"variant": "operator_image", "operator": self.label, "base": self.base.to_dict(),
                "transpose": [{"beta": list(b), "coef": str(c)} for b, c in self.btab]}


def from_descriptor(d):
    v = d.get("variant")
    if v == "density":
        return Density(d["support"], d["profile"])
    if v == "points":
        return PointCombo(d["atoms"], carrier=d.get("carrier"))
    if v == "wedge":
        return WedgeBoundary(d["g"], d["V"], d["y"], carrier=d.get("carrier"), delta=d.get("delta"))
    if v == "combination":
        return Combination([(complex(*p["a"]) if isinstance(p["a"], list) else p["a"],
                             from_descriptor(p["functional"])) for p in d["parts"]])
    raise FunctionalError(f"unknown functional variant {v!r}")


# ---------------------------------------------------------------- heat approximation

class HeatApproximation(TestFunction):
    """H^eps(w) = int_W (4 pi eps)^{-N/2} exp(-(x - w).(x - w) / (4 eps)) h(x) dx.

    The xi-integral of the defining double integral is a Gaussian and is
    done in closed form; the x-integral uses panels of width ~sqrt(eps)/2.
    The bilinear square (x - w).(x - w) keeps H^eps entire in w.
    """

    def __init__(self, h, W, eps, alpha=None, order=GL_ORDER):
        if eps <= 0:
            raise FunctionalError("eps must be positive")
        self.h = h
        self.W = as_box(W)
        self.N = self.W.N
        self.eps = float(eps)
        self.alpha = tuple(alpha) if alpha is not None else (0,) * self.N
        self.label = f"H^{eps:g}[{getattr(h, 'label', h)}]"
        self.expr = None
        axes = []
        for a, b in self.W.intervals:
            n = int(np.ceil((b - a) / (0.5 * np.sqrt(self.eps)))) + 4
            axes.append(composite_nodes(a, b, n, order))
        self._axes = axes
        if self.N == 1:
            self._x = axes[0][0][:, None]
            self._wx = axes[0][1]
        else:
            self._x = np.stack(np.meshgrid(*[x for x, _ in axes], indexing="ij"), -1).reshape(-1, self.N)
            self._wx = np.prod(np.stack(np.meshgrid(*[w for _, w in axes], indexing="ij"), -1), -1).ravel()
        self._hx = h(self._x)
        xs, ws_ = sp.symbols("x"), sp.symbols("w")
        k1 = sp.exp(-(xs - ws_) ** 2 / (4 * sp.Float(self.eps)))
        self._dk = []
        for a in self.alpha:
            self._dk.append(sp.lambdify((xs, ws_), sp.simplify(sp.diff(k1, ws_, a) / k1), "numpy"))

    def __call__(self, w, chunk=2048):
        w = np.asarray(w, dtype=complex)
        if self.N == 1 and (w.ndim == 0 or w.shape[-1] != 1):
            w = w[..., None]
        flat = w.reshape(-1, self.N)
        out = np.empty(len(flat), dtype=complex)
        norm = (4 * np.pi * self.eps) ** (-self.N / 2)
        for s in range(0, len(flat), chunk):
            wb = flat[s:s + chunk]
            diff = self._x[None, :, :] - wb[:, None, :]
            q = np.sum(diff * diff, axis=-1)
            K = np.exp(-q / (4 * self.eps))
            for j, f in enumerate(self._dk):
                if self.alpha[j]:
                    K = K * f(self._x[None, :, j], wb[:, None, j])
            out[s:s + chunk] = norm * (K * (self._wx * self._hx)[None, :]).sum(axis=1)
        return out.reshape(w.shape[:-1])

    def derivative(self, alpha):
        alpha = tuple(a + b for a, b in zip(self.alpha, alpha))
        return HeatApproximation(self.h, self.W, self.eps, alpha)


def heat_approx(h, W, eps, K=None, delta=0.1, n_grid=21):
    """H^eps together with sup |h - H^eps| on a grid over K_delta."""
    H = HeatApproximation(h, W, eps)
    W = as_box(W)
    if K is None:
        K = CompactBox(tuple((a + 0.25 * (b - a), b - 0.25 * (b - a)) for a, b in W.intervals))
    K = as_box(K)
    axes = []
    for a, b in K.intervals:
        re = np.linspace(a - delta, b + delta, n_grid)
        im = np.linspace(-delta, delta, 5)
        axes.append((re[:, None] + 1j * im[None, :]).ravel())
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, K.N)
    err = float(np.max(np.abs(h(pts) - H(pts))))
    return {"H": H, "sup_error": err, "K": K.to_list(), "delta": delta, "eps": eps}


def difference_is_boundary_carried(mu1, mu2, p, taus=None, tol=None, **kw):
    """Check that mu1 - mu2 shows FBI carrier decay at interior points.

    Returns {"result": True/False/"inconclusive", "points": [...]}; the
    decay test is the analytic-regularity fit of the classifier module.
    """
    from .classify import decay_check
    diff = mu1 - mu2
    box = mu1.carrier.hull(mu2.carrier)
    if taus is None:
        taus = []
        axes = [np.linspace(a, b, 7)[1:-1] for a, b in box.intervals]
        for t in product(*axes):
            taus.append(np.array(t))
    rows = []
    verdict = True
    for tau in taus:
        res = decay_check(diff, p, tau, **kw)
        rows.append({"tau": list(np.atleast_1d(tau).astype(float)), **res})
        if res["decays"] is False:
            verdict = False
        elif res["decays"] == "inconclusive" and verdict is True:
            verdict = "inconclusive"
    return {"result": verdict, "points": rows}
