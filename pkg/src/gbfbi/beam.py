"""Gaussian beams along a geodesic: Fermi chart, Riccati phase, transport
amplitudes, evaluation with derivatives and residual quadrature."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.fft import dct
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import kernels
from .geodesic import GeodesicPath, chart_diameter, shoot
from .manifold import ChartMetric, curvature_at, curvature_grad, sharp

PLATEAU = 0.6        # cutoff equals 1 on |y| <= PLATEAU * delta
JET_ORDER = 8        # Taylor order of the tube metric in y


class ResolutionWarning(UserWarning):
    pass


class ShrinkDelta(ValueError):
    """Inverse Fermi map failed on the requested tube."""

    def __init__(self, msg, largest):
        super().__init__(msg)
        self.largest = largest


class UnsupportedOrder(ValueError):
    pass


# ---------------------------------------------------------------------------
# Chebyshev helpers
# ---------------------------------------------------------------------------

def cheb_nodes(n: int) -> np.ndarray:
    return np.cos(np.pi * (np.arange(n) + 0.5) / n)


def cheb_coeffs(vals, axis: int = 0):
    """Interpolation coefficients from values at ``cheb_nodes`` along ``axis``."""
    vals = np.asarray(vals)
    n = vals.shape[axis]
    c = dct(vals, type=2, axis=axis) / n
    idx = [slice(None)] * vals.ndim
    idx[axis] = 0
    c[tuple(idx)] *= 0.5
    return c


class ChebLine:
    """Chebyshev interpolation on [lo, hi]."""

    def __init__(self, lo: float, hi: float, n: int):
        self.lo, self.hi, self.n = float(lo), float(hi), int(n)
        self.t = self.to_t(cheb_nodes(n))

    def to_u(self, t):
        return (2.0 * np.asarray(t, float) - self.lo - self.hi) / (self.hi - self.lo)

    def to_t(self, u):
        return 0.5 * (self.hi - self.lo) * u + 0.5 * (self.hi + self.lo)

    def fit(self, vals):
        return cheb_coeffs(vals, axis=0)

    def deriv(self, c, m: int = 1):
        return cheb.chebder(c, m, scl=2.0 / (self.hi - self.lo), axis=0)

    def integral_from(self, c, t0: float = 0.0):
        """Coefficients of the antiderivative vanishing at t0."""
        return cheb.chebint(c, 1, lbnd=float(self.to_u(t0)), scl=0.5 * (self.hi - self.lo), axis=0)

    def __call__(self, c, t):
        return cheb.chebval(self.to_u(t), c, tensor=False) if np.ndim(c) == 1 else \
            cheb.chebval(self.to_u(t), c)

    def tail(self, c) -> float:
        """Relative size of the last quarter of the coefficients."""
        a = np.abs(np.asarray(c))
        a = a.reshape(a.shape[0], -1).max(axis=1)
        return float(a[-max(2, self.n // 4):].max() / max(a.max(), 1e-300))


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------

def _step(u):
    # smooth 0 -> 1 on [0, 1], with first two derivatives
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
        da = np.where(u > 0, a / np.where(u > 0, u, 1.0) ** 2, 0.0)
        db = np.where(u < 1, -b / np.where(u < 1, 1.0 - u, 1.0) ** 2, 0.0)
        dda = np.where(u > 0, a * (1.0 - 2.0 * u) / np.where(u > 0, u, 1.0) ** 4, 0.0)
        w = np.where(u < 1, 1.0 - u, 1.0)
        ddb = np.where(u < 1, b * (1.0 - 2.0 * w) / w ** 4, 0.0)
    s = a + b
    f = a / s
    ds = da + db
    df = (da * s - a * ds) / s ** 2
    dds = dda + ddb
    ddf = (dda * s - a * dds) / s ** 2 - 2.0 * ds * df / s
    return f, df, ddf


def cutoff(r, plateau: float = PLATEAU):
    """C-infinity even cutoff: 1 on |r| <= plateau, 0 on |r| >= 1; returns (chi, chi', chi'')."""
    r = np.asarray(r, float)
    u = (1.0 - np.abs(r)) / (1.0 - plateau)
    f, df, ddf = _step(u)
    sg = np.sign(r)
    k = 1.0 / (1.0 - plateau)
    return f, -sg * k * df, k * k * ddf


# ---------------------------------------------------------------------------
# Riccati equation via the linear system Y'' = F Y
# ---------------------------------------------------------------------------

@dataclass
class RiccatiSolution:
    """H = Y'/Y for Y'' = F Y, Y(0) = 1, Y'(0) = H0; logY carries the continuous branch."""
    t: np.ndarray
    Y: np.ndarray
    Yd: np.ndarray
    H: np.ndarray
    F: np.ndarray
    logY: np.ndarray
    H0: complex
    _sols: list = field(repr=False, default_factory=list)
    _F: object = field(repr=False, default=None)

    def _eval(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        out = np.empty((6, t.size))
        done = np.zeros(t.size, bool)
        for lo, hi, sol in self._sols:
            m = (~done) & (t >= lo - 1e-12) & (t <= hi + 1e-12)
            if np.any(m):
                out[:, m] = sol(t[m])
                done |= m
        if not np.all(done):
            raise ValueError("time outside the Riccati span")
        return out

    def Y_at(self, t):
        s = self._eval(t)
        return s[0] + 1j * s[1]

    def Yd_at(self, t):
        s = self._eval(t)
        return s[2] + 1j * s[3]

    def logY_at(self, t):
        s = self._eval(t)
        return s[4] + 1j * s[5]

    def H_at(self, t):
        s = self._eval(t)
        return (s[2] + 1j * s[3]) / (s[0] + 1j * s[1])

    def residual(self, h: float = 1e-5) -> float:
        """max |H' + H^2 - F| over the samples, H' by central differences of the dense output."""
        lo, hi = self.t.min() + h, self.t.max() - h
        t = np.clip(self.t, lo, hi)
        Hd = (self.H_at(t + h) - self.H_at(t - h)) / (2 * h)
        H = self.H_at(t)
        return float(np.max(np.abs(Hd + H * H - self._F(t))))


def riccati_solve(F, t_lo: float, t_hi: float, H0: complex = 1j, n: int = 401,
                  rtol: float = 1e-12) -> RiccatiSolution:
    """Solve H' + H^2 = F, H(0) = H0 on [t_lo, t_hi] (t_lo <= 0 <= t_hi).

    ``F`` is a callable of t (vectorized) or a constant.
    """
    if not np.imag(H0) > 0:
        raise ValueError("Im H0 must be positive")
    if not t_lo <= 0.0 <= t_hi:
        raise ValueError("interval must contain 0")
    Fc = F if callable(F) else (lambda t, c=float(F): np.full(np.shape(t), c))

    def rhs(t, s):
        f = float(Fc(np.array([t]))[0])
        Y = s[0] + 1j * s[1]
        Yd = s[2] + 1j * s[3]
        Ydd = f * Y
        L = Yd / Y
        return [Yd.real, Yd.imag, Ydd.real, Ydd.imag, L.real, L.imag]

    s0 = [1.0, 0.0, float(np.real(H0)), float(np.imag(H0)), 0.0, 0.0]
    sols = []
    for end in (t_lo, t_hi):
        if end == 0.0:
            continue
        r = solve_ivp(rhs, (0.0, end), s0, method="DOP853", rtol=rtol, atol=1e-14, dense_output=True)
        sols.append((min(0.0, end), max(0.0, end), r.sol))
    if not sols:
        raise ValueError("empty interval")
    out = RiccatiSolution(np.array([]), None, None, None, None, None, complex(H0), sols, Fc)
    t = np.linspace(t_lo, t_hi, n)
    s = out._eval(t)
    Y = s[0] + 1j * s[1]
    if np.min(np.abs(Y)) < 1e-12:
        raise FloatingPointError("linear Riccati solution vanished")
    Yd = s[2] + 1j * s[3]
    out.t, out.Y, out.Yd, out.H, out.F, out.logY = t, Y, Yd, Yd / Y, Fc(t), s[4] + 1j * s[5]
    return out


# ---------------------------------------------------------------------------
# Fermi chart
# ---------------------------------------------------------------------------

def _normals(path: GeodesicPath, t, sign: float):
    s = path.state(t)
    v = s[:, 2:4]
    return s[:, 0:2], sign * np.stack([-v[:, 1], v[:, 0]], axis=1)


def _ray_fan(chart, X, N, ys, step: float = 0.004):
    """Rays from X along +N and -N; returns (x1, x2, A, A_y) on the grid (len(X), len(ys)).

    ``ys`` must be sorted and symmetric about 0.
    """
    ys = 0.5 * (ys - ys[::-1])
    pos = ys[ys > 0]
    nsub = max(2, int(np.ceil(float(pos.max()) / (len(pos) * step))))
    X = np.ascontiguousarray(X)
    out = np.empty((len(X), len(ys), 4))
    up = kernels.rays_rk4(chart.code, chart.params, X, np.ascontiguousarray(N), np.ascontiguousarray(pos), nsub)
    dn = kernels.rays_rk4(chart.code, chart.params, X, np.ascontiguousarray(-N), np.ascontiguousarray(pos), nsub)
    ip = np.nonzero(ys > 0)[0]
    ineg = len(ys) - 1 - ip
    out[:, ip, 0:2] = up[:, :, 0:2]
    out[:, ip, 2] = up[:, :, 4]
    out[:, ip, 3] = up[:, :, 5]
    out[:, ineg, 0:2] = dn[:, :, 0:2]
    out[:, ineg, 2] = dn[:, :, 4]
    out[:, ineg, 3] = -dn[:, :, 5]
    z = np.nonzero(ys == 0)[0]
    if z.size:
        out[:, z[0], 0:2] = X
        out[:, z[0], 2] = 1.0
        out[:, z[0], 3] = 0.0
    return out


def focal_distance(chart: ChartMetric, path: GeodesicPath, t_lo, t_hi, y_max: float,
                   n_t: int = 33, n_y: int = 400) -> float:
    """Smallest |y| where a normal Jacobi field A(t, .) vanishes (capped at y_max)."""
    t = np.linspace(t_lo, t_hi, n_t)
    X, N = _normals(path, t, 1.0)
    ys = np.linspace(-y_max, y_max, 2 * n_y + 1)
    with np.errstate(all="ignore"):
        R = _ray_fan(chart, X, N, ys, step=min(0.004, y_max / n_y))
    A = R[:, :, 2]
    bad = ~(A > 0) | ~np.isfinite(R[:, :, 0])
    hit = np.where(bad, np.abs(ys)[None, :], np.inf)
    return float(min(y_max, hit.min()))


def _trim(c, rel: float = 1e-15, scale: float | None = None):
    """Drop trailing rows and columns of negligible coefficients."""
    a = np.abs(c)
    cut = rel * max(a.max() if scale is None else scale, 1.0)
    rows = np.nonzero(a.max(1) > cut)[0]
    cols = np.nonzero(a.max(0) > cut)[0]
    nr = rows[-1] + 1 if rows.size else 1
    nc = cols[-1] + 1 if cols.size else 1
    return np.ascontiguousarray(c[:nr, :nc])


def _rmul(T, A):
    """T @ A for real T without promoting T to complex."""
    if np.iscomplexobj(A):
        return T @ np.ascontiguousarray(A.real) + 1j * (T @ np.ascontiguousarray(A.imag))
    return T @ A


class PanelCheb:
    """A 2D Chebyshev tensor re-expanded on equal panels in u.

    Each panel carries its own (trimmed) tensor in the local variable, so a
    long tube axis costs a short series per point instead of the global one.
    """

    def __init__(self, C, n_panels: int, rel: float):
        nt = C.shape[0]
        self.n = n_panels
        self.half = 1.0 / n_panels
        k = np.arange(nt)
        w = np.cos(np.pi * (k + 0.5) / nt)             # first-kind nodes
        T = cheb.chebvander(w, nt - 1)
        D = (2.0 / nt) * T.T
        D[0] *= 0.5
        scale = np.abs(C).max()
        self.C = []
        for p in range(n_panels):
            mid = -1.0 + (2 * p + 1) * self.half
            V = cheb.chebvander(mid + self.half * w, nt - 1)
            self.C.append(_trim(D @ (V @ C), rel, scale))

    def __call__(self, u, v):
        p = np.clip(((u + 1.0) * 0.5 * self.n).astype(np.intp), 0, self.n - 1)
        w = (u - (-1.0 + (2 * p + 1) * self.half)) / self.half
        val, du, dv = np.empty_like(u), np.empty_like(u), np.empty_like(u)
        order = np.argsort(p, kind="stable")
        bounds = np.searchsorted(p[order], np.arange(self.n + 1))
        for q in range(self.n):
            idx = order[bounds[q]:bounds[q + 1]]
            if idx.size:
                val[idx], du[idx], dv[idx] = kernels.cheb2d(self.C[q], w[idx], v[idx])
        return val, du / self.half, dv


class FermiChart:
    """Tube coordinates (t, y) -> x = exp_{gamma(t)}(y N(t)) on [t_lo, t_hi] x [-delta, delta].

    The metric pulls back to A(t, y)^2 dt^2 + dy^2; x and A are stored as
    tensor Chebyshev interpolants.
    """

    def __init__(self, path: GeodesicPath, frame, delta: float, t_lo: float, t_hi: float,
                 n_t: int = 64, n_y: int = 32, tol: float = 1e-12, max_n: int = 512):
        self.path = path
        self.chart = path.chart
        self.delta = float(delta)
        self.t_lo, self.t_hi = float(t_lo), float(t_hi)
        v0 = path.state(0.0)[0, 2:4]
        up = sharp(self.chart, path.z, frame.F2)
        self.sign = 1.0 if v0[0] * up[1] - v0[1] * up[0] > 0 else -1.0
        while True:
            self._build(n_t, n_y)
            tt, ty = self.tails()
            if (tt < tol or n_t >= max_n) and (ty < tol or n_y >= max_n):
                break
            if tt >= tol and n_t < max_n:
                n_t *= 2
            if ty >= tol and n_y < max_n:
                n_y *= 2
        self.n_t, self.n_y = n_t, n_y
        # about one panel per 12 retained t-coefficients
        n_pan = max(1, _trim(self.C[0], tol).shape[0] // 12)
        self._Ce = [PanelCheb(c, n_pan, tol) for c in self.C]
        dense = np.linspace(self.t_lo, self.t_hi, max(200, int(80 * (self.t_hi - self.t_lo))))
        self._axis_t = dense
        self._axis_x = path.x(dense)
        self._axis_tree = cKDTree(self._axis_x)

    def _build(self, n_t, n_y):
        self.lt = ChebLine(self.t_lo, self.t_hi, n_t)
        self.ly = ChebLine(-self.delta, self.delta, n_y)
        ys = np.sort(self.ly.t)
        ys = 0.5 * (ys - ys[::-1])          # exact symmetry
        X, N = _normals(self.path, self.lt.t, self.sign)
        R = _ray_fan(self.chart, X, N, ys)
        # back to descending node order used by the DCT
        R = R[:, ::-1, :]
        C = cheb_coeffs(cheb_coeffs(R, axis=0), axis=1)
        self.C = [np.ascontiguousarray(C[:, :, i]) for i in range(3)]

    def tails(self):
        a = np.max([np.abs(c) for c in self.C], axis=0)
        q0, q1 = max(2, a.shape[0] // 4), max(2, a.shape[1] // 4)
        m = a.max()
        return float(a[-q0:, :].max() / m), float(a[:, -q1:].max() / m)

    # --- forward -----------------------------------------------------------
    def _uv(self, t, y):
        return self.lt.to_u(t), self.ly.to_u(y)

    def forward(self, t, y):
        """Chart points (..., 2) and Jacobian (..., 2, 2) = d x / d(t, y)."""
        t, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(y, float))
        sh = t.shape
        u, v = self._uv(t.ravel(), y.ravel())
        st = 2.0 / (self.t_hi - self.t_lo)
        sy = 1.0 / self.delta
        x1, x1u, x1v = self._Ce[0](u, v)
        x2, x2u, x2v = self._Ce[1](u, v)
        X = np.stack([x1, x2], -1).reshape(sh + (2,))
        J = np.stack([np.stack([x1u * st, x1v * sy], -1), np.stack([x2u * st, x2v * sy], -1)], -2)
        return X, J.reshape(sh + (2, 2))

    def A(self, t, y):
        """Tube metric factor with its t and y partials."""
        t, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(y, float))
        u, v = self._uv(t.ravel(), y.ravel())
        a, au, av = self._Ce[2](u, v)
        sh = t.shape
        return (a.reshape(sh), (au * 2.0 / (self.t_hi - self.t_lo)).reshape(sh),
                (av / self.delta).reshape(sh))

    def pullback_metric(self, t, y):
        X, J = self.forward(t, y)
        e = self.chart.conformal_factor(X) ** 2
        return np.einsum("...ki,...kj->...ij", J, J) * e[..., None, None]

    # --- inverse -----------------------------------------------------------
    def inverse(self, x, tol: float = 1e-13, maxit: int = 40):
        """(t, y, ok) for chart points x (..., 2); ok False outside the tube or on Newton failure."""
        x = np.asarray(x, float)
        sh = x.shape[:-1]
        P = x.reshape(-1, 2)
        idx = self._axis_tree.query(P)[1]
        t = self._axis_t[idx].copy()
        s = self.path.state(t)
        nv = self.sign * np.stack([-s[:, 3], s[:, 2]], 1)
        y = np.sum((P - s[:, :2]) * nv, 1) / np.sum(nv * nv, 1)
        y = np.clip(y, -self.delta, self.delta)
        active = np.ones(len(t), bool)
        pinned = np.zeros(len(t), bool)
        for _ in range(maxit):
            X, J = self.forward(t[active], y[active])
            r = P[active] - X
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            dt = (J[:, 1, 1] * r[:, 0] - J[:, 0, 1] * r[:, 1]) / det
            dy = (-J[:, 1, 0] * r[:, 0] + J[:, 0, 0] * r[:, 1]) / det
            ia = np.nonzero(active)[0]
            tn, yn = t[ia] + dt, y[ia] + dy
            t[ia] = np.clip(tn, self.t_lo, self.t_hi)
            y[ia] = np.clip(yn, -self.delta, self.delta)
            clipped = (t[ia] != tn) | (y[ia] != yn)
            # a point pushed against the chart edge twice in a row lies outside it
            done = (np.abs(dt) + np.abs(dy) < tol) | (clipped & pinned[ia]) | ~np.isfinite(dt + dy)
            pinned[ia] = clipped
            active[ia[done]] = False
            if not active.any():
                break
        X, _ = self.forward(t, y)
        err = np.linalg.norm(X - P, axis=1)
        ok = (err < 1e-9) & np.isfinite(err)
        return t.reshape(sh), y.reshape(sh), ok.reshape(sh)

    def roundtrip_error(self, n_t: int = 50, n_y: int = 11, frac: float = 0.95):
        t = np.linspace(self.t_lo, self.t_hi, n_t)
        y = np.linspace(-frac * self.delta, frac * self.delta, n_y)
        T, Yg = np.meshgrid(t, y, indexing="ij")
        X, _ = self.forward(T, Yg)
        t2, y2, ok = self.inverse(X)
        err = np.hypot(t2 - T, y2 - Yg)
        return float(np.where(ok, err, np.inf).max())

    def axis_jet_defect(self, n: int = 101, h: float = 1e-4):
        """max over the axis of |g(t, 0) - I| and |d_y g(t, 0)|."""
        t = np.linspace(self.t_lo, self.t_hi, n)
        g0 = self.pullback_metric(t, 0.0 * t)
        gp = self.pullback_metric(t, h + 0.0 * t)
        gm = self.pullback_metric(t, -h + 0.0 * t)
        dg = (gp - gm) / (2 * h)
        return float(np.abs(g0 - np.eye(2)).max()), float(np.abs(dg).max())


def fermi_chart(path: GeodesicPath, frame, delta: float | None = None, t_pad: float | None = None,
                **kw) -> FermiChart:
    """Build and validate the tube chart.

    Without ``delta`` the tube half-width defaults to half the largest width
    (focal-limited, capped at twice the chart diameter) on which the inverse
    map round-trips. An explicit ``delta`` that fails raises ShrinkDelta.
    """
    if t_pad is None:
        t_pad = path.extend
    t_lo, t_hi = -path.t_in - t_pad, path.t_out + t_pad
    if delta is not None:
        fc = FermiChart(path, frame, delta, t_lo, t_hi, **kw)
        if fc.roundtrip_error() < 1e-9:
            return fc
        good = float(delta)
        while good > 1e-3:
            good *= 0.8
            if FermiChart(path, frame, good, t_lo, t_hi, **kw).roundtrip_error() < 1e-9:
                break
        raise ShrinkDelta(f"inverse Fermi map fails at delta={delta:.4g}", good)
    cap = 2.0 * chart_diameter(path.chart)
    width = focal_distance(path.chart, path, t_lo, t_hi, cap)
    while width > 1e-3:
        if FermiChart(path, frame, width, t_lo, t_hi, **kw).roundtrip_error() < 1e-9:
            break
        width *= 0.8
    return FermiChart(path, frame, 0.5 * width, t_lo, t_hi, **kw)


# ---------------------------------------------------------------------------
# amplitude hierarchy
#
# The amplitude is a finite sum  b = sum s^p y^k c_pk(t).  On the beam y is of
# size s^(-1/2), so the monomial s^p y^k carries weight p - k/2.  Order N
# removes every residual level of weight >= 1 - 2N; each level is solved for
# descending k from   c' + (k + 1/2) H c = (R_pk - (k+2)(k+1) c_{p-1,k+2}) / (2i).
# ---------------------------------------------------------------------------

class _Axis:
    """Values on Chebyshev nodes of [lo, hi] with spectral d/dt and integral from 0."""

    def __init__(self, lo, hi, n):
        self.line = ChebLine(lo, hi, n)
        self.t = self.line.t
        Cm = cheb_coeffs(np.eye(n), axis=0)
        u = self.line.to_u(self.t)
        self.D = cheb.chebval(u, self.line.deriv(Cm)).T
        self.Q = cheb.chebval(u, self.line.integral_from(Cm, 0.0)).T
        self.Cm = Cm

    def coeffs(self, vals):
        return self.Cm @ vals


def _ymul(a, b, kmax):
    out = [0.0] * (kmax + 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            if i + j <= kmax:
                out[i + j] = out[i + j] + ai * bj
    return out


def _yinv(a, kmax):
    # reciprocal of a power series with a[0] != 0
    out = [1.0 / a[0]]
    for k in range(1, kmax + 1):
        acc = 0.0
        for j in range(1, min(k, len(a) - 1) + 1):
            acc = acc + a[j] * out[k - j]
        out.append(-acc * out[0])
    return out


def _weight(key):
    return key[0] - 0.5 * key[1]


class _Series(dict):
    """(p, k) -> values on the axis nodes."""

    def add(self, key, val):
        self[key] = self[key] + val if key in self else val
        return self

    def scaled(self, c, dp=0):
        return _Series({(p + dp, k): c * v for (p, k), v in self.items()})

    def __add__(self, other):
        out = _Series(self)
        for key, v in other.items():
            out.add(key, v)
        return out

    def ymul(self, ser, floor):
        """Multiply by a y-series with s-power 0, keeping weights >= floor."""
        out = _Series()
        for (p, k), v in self.items():
            for j, a in enumerate(ser):
                if np.isscalar(a) and a == 0.0:
                    continue
                if _weight((p, k + j)) >= floor:
                    out.add((p, k + j), v * a)
        return out

    def dt(self, D):
        return _Series({key: D @ v for key, v in self.items()})

    def dy(self):
        return _Series({(p, k - 1): k * v for (p, k), v in self.items() if k > 0})


@dataclass
class AxisData:
    """t-functions along the beam axis needed by the hierarchy and evaluation."""
    axis: _Axis
    H: np.ndarray
    F: np.ndarray
    logY: np.ndarray
    alpha: list          # Taylor coefficients of A in y, alpha[j](t)


def _formal_residual(b: _Series, ad: AxisData, floor: float) -> _Series:
    D = ad.axis.D
    J = len(ad.alpha) - 1
    H, F = ad.H, ad.F
    Hp = F - H * H
    Hpp = D @ F - 2.0 * H * Hp
    A = ad.alpha
    Ainv = _yinv(A, J)
    Am2 = _ymul(Ainv, Ainv, J)
    At = [D @ a if not np.isscalar(a) else 0.0 for a in A]
    Am3At = _ymul(_ymul(Am2, Ainv, J), At, J)
    Ay = [j * A[j] for j in range(1, J + 1)]
    AyA = _ymul(Ay, Ainv, J)
    Th_t = [1.0, 0.0, 0.5 * Hp]
    Th_y = [0.0, H]
    Th_tt = [0.0, 0.0, 0.5 * Hpp]
    E = _ymul(Am2, _ymul(Th_t, Th_t, J), J)
    E[2] = E[2] + H * H
    E[0] = E[0] - 1.0
    LapTh = [0.0] * (J + 1)
    for part in (_ymul(Am2, Th_tt, J), [-x for x in _ymul(Am3At, Th_t, J)], [H], _ymul(AyA, Th_y, J)):
        for i, v in enumerate(part):
            LapTh[i] = LapTh[i] + v
    bt = b.dt(D)
    btt = bt.dt(D)
    by = b.dy()
    byy = by.dy()
    lo = floor - 2.0
    G = bt.ymul(_ymul(Am2, Th_t, J), lo) + by.ymul(Th_y, lo)
    lap_b = (btt.ymul(Am2, lo) + bt.ymul([-x for x in Am3At], lo) + byy + by.ymul(AyA, lo))
    R = b.ymul(E, floor - 2.0).scaled(1.0, 2)
    R = R + (G.scaled(2.0) + b.ymul(LapTh, lo)).scaled(-1j, 1)
    R = R + lap_b.scaled(-1.0)
    return _Series({k: v for k, v in R.items() if _weight(k) >= floor})


def transport_amplitudes(ad: AxisData, N: int):
    """Amplitude terms {(p, k): values} for truncation order N in {0, 1}."""
    if N not in (0, 1):
        raise UnsupportedOrder(f"order {N} not supported (use 0 or 1)")
    ax = ad.axis
    b = _Series({(0, 0): np.exp(-0.5 * ad.logY)})
    if N == 0:
        return b
    stop = 1.0 - 2.0 * N
    w = 0.5
    while w >= stop - 1e-12:
        R = _formal_residual(b, ad, w)
        lvl = {k: v for k, v in R.items() if abs(_weight(k) - w) < 1e-12}
        kmax = max([k for _, k in lvl], default=-1)
        new = {}
        for K in range(kmax, -1, -1):
            P = w + 0.5 * K
            if abs(P - round(P)) > 1e-12:
                continue
            P = int(round(P))
            rhs = lvl.get((P, K), 0.0) - (K + 2) * (K + 1) * new.get((P, K + 2), 0.0)
            if np.isscalar(rhs) and rhs == 0.0:
                continue
            rhs = rhs / 2j
            up = np.exp((K + 0.5) * ad.logY)
            new[(P - 1, K)] = ax.Q @ (up * rhs) / up
        for key, v in new.items():
            b.add(key, v)
        w -= 0.5
    return b


def residual_levels(ad: AxisData, b, floor: float):
    """max |coefficient| of the formal residual per weight level >= floor."""
    R = _formal_residual(_Series(b), ad, floor)
    out = {}
    for key, v in R.items():
        w = _weight(key)
        out[w] = max(out.get(w, 0.0), float(np.max(np.abs(v))))
    return dict(sorted(out.items(), reverse=True))


def metric_jets(path: GeodesicPath, sign: float, t_nodes, order: int = 6, half: float = 0.2,
                n: int = 12):
    """Taylor coefficients alpha_j(t) of A(t, y) in y, from a small-y Chebyshev fit of normal rays.

    alpha_0 = 1, alpha_1 = 0, alpha_2 = -K/2 and alpha_3 = -K_y/6 are set exactly.
    """
    chart = path.chart
    X, N = _normals(path, t_nodes, sign)
    ys = np.sort(cheb_nodes(n)) * half
    ys = 0.5 * (ys - ys[::-1])
    R = _ray_fan(chart, X, N, ys, step=half / 400)
    poly = np.polynomial.polynomial.polyfit(ys / half, R[:, :, 2].T, n - 1)   # (n, len(t))
    K = curvature_at(chart, X)
    Ky = np.einsum("ni,ni->n", curvature_grad(chart, X), N)
    alpha = [1.0, 0.0, -0.5 * K, -Ky / 6.0]
    for j in range(4, order + 1):
        alpha.append(poly[j] / half ** j)
    return alpha[:order + 1]


def axis_data(path: GeodesicPath, sign: float, t_lo: float, t_hi: float, n: int = 96,
              H0: complex = 1j, order: int = 6) -> AxisData:
    ax = _Axis(t_lo, t_hi, n)
    chart = path.chart

    def F(t):
        return -curvature_at(chart, path.x(t))
    ric = riccati_solve(F, t_lo, t_hi, H0=H0)
    H = ric.H_at(ax.t)
    logY = ric.logY_at(ax.t)
    alpha = metric_jets(path, sign, ax.t, order)
    ad = AxisData(ax, H, F(ax.t), logY, alpha)
    ad.riccati = ric
    return ad


# ---------------------------------------------------------------------------
# the beam
# ---------------------------------------------------------------------------

class GaussianBeam:
    """v_s = tau^(1/4) exp(i s Theta) chi(y / delta) b(t, y; s), Theta = t + H(t) y^2 / 2."""

    def __init__(self, fermi: FermiChart, ad: AxisData, terms: dict, order: int,
                 plateau: float = PLATEAU, scale: complex = 1.0):
        self.fermi = fermi
        self.axis = ad
        self.order = order
        self.plateau = plateau
        self.scale = scale
        self.delta = fermi.delta
        line = ad.axis.line
        self.line = line
        self.keys = sorted(terms)
        Cc = np.array([line.fit(terms[k]) for k in self.keys])          # (nterms, n)
        self._c = Cc
        self._c1 = np.array([np.pad(line.deriv(c), (0, 1)) for c in Cc])
        self._c2 = np.array([np.pad(line.deriv(c, 2), (0, 2)) for c in Cc])
        self._p = np.array([k[0] for k in self.keys])
        self._k = np.array([k[1] for k in self.keys])
        Hc = line.fit(ad.H)
        Fc = line.fit(ad.F)
        self._H = Hc
        self._F = Fc
        self._F1 = np.pad(line.deriv(Fc), (0, 1))
        self.riccati = getattr(ad, "riccati", None)

    @property
    def path(self):
        return self.fermi.path

    @property
    def chart(self):
        return self.fermi.chart

    def terms(self, t):
        """Values of the amplitude coefficients at t, keyed by (p, k)."""
        V = cheb.chebvander(self.line.to_u(t), self.line.n - 1) @ self._c.T
        return {k: V[..., i] for i, k in enumerate(self.keys)}

    def a0(self, t):
        return self.terms(t)[(0, 0)]

    def H(self, t):
        return _rmul(cheb.chebvander(self.line.to_u(t), self.line.n - 1), self._H)

    def phase(self, t, y):
        return t + 0.5 * self.H(t) * y * y

    def with_scale(self, scale) -> "GaussianBeam":
        out = object.__new__(GaussianBeam)
        out.__dict__.update(self.__dict__)
        out.scale = scale
        return out

    def fields(self, s, t, y, derivs: int = 2):
        """Beam value and Fermi-coordinate data at (t, y); arrays of one shape."""
        s = complex(s)
        tau = s.real
        t = np.asarray(t, float)
        y = np.asarray(y, float)
        sh = t.shape
        t, y = t.ravel(), y.ravel()
        T = cheb.chebvander(self.line.to_u(t), self.line.n - 1)
        sp = s ** self._p.astype(float)
        yk = y[:, None] ** self._k[None, :]
        C = _rmul(T, self._c.T) * sp
        b = np.sum(C * yk, 1)
        H = _rmul(T, self._H)
        F = _rmul(T, self._F)
        Hp = F - H * H
        theta = t + 0.5 * H * y * y
        r = y / self.delta
        chi, dchi, ddchi = cutoff(r, self.plateau)
        pref = self.scale * tau ** 0.25 * np.exp(1j * s * theta)
        out = {"t": t, "y": y, "theta": theta, "chi": chi, "v": pref * chi * b, "b": b, "pref": pref}
        if derivs == 0:
            return {k: (v.reshape(sh) if np.ndim(v) else v) for k, v in out.items()}
        C1 = _rmul(T, self._c1.T) * sp
        C2 = _rmul(T, self._c2.T) * sp
        k = self._k[None, :]
        ykm1 = np.where(k >= 1, y[:, None] ** np.maximum(k - 1, 0), 0.0)
        ykm2 = np.where(k >= 2, y[:, None] ** np.maximum(k - 2, 0), 0.0)
        bt = np.sum(C1 * yk, 1)
        btt = np.sum(C2 * yk, 1)
        by = np.sum(C * k * ykm1, 1)
        byy = np.sum(C * k * (k - 1) * ykm2, 1)
        Hpp = (_rmul(T, self._F1)) - 2.0 * H * Hp
        # cutoff applied
        d = self.delta
        Bt, Btt = chi * bt, chi * btt
        By = dchi / d * b + chi * by
        Byy = ddchi / d ** 2 * b + 2.0 * dchi / d * by + chi * byy
        B_ = chi * b
        A, At, Ay = self.fermi.A(t, y)
        Ai2 = 1.0 / (A * A)
        th_t = 1.0 + 0.5 * Hp * y * y
        th_y = H * y
        th_tt = 0.5 * Hpp * y * y
        grad2 = Ai2 * th_t * th_t + th_y * th_y
        lap_th = Ai2 * th_tt - Ai2 / A * At * th_t + H + Ay / A * th_y
        G = Ai2 * th_t * Bt + th_y * By
        lap_b = Ai2 * Btt - Ai2 / A * At * Bt + Byy + Ay / A * By
        E = Ai2 * th_t * th_t - 1.0 + th_y * th_y
        out.update({
            "v_t": pref * (1j * s * th_t * B_ + Bt),
            "v_y": pref * (1j * s * th_y * B_ + By),
            "lap": pref * (-s * s * grad2 * B_ + 1j * s * (2.0 * G + lap_th * B_) + lap_b),
            "residual": pref * (s * s * E * B_ - 1j * s * (2.0 * G + lap_th * B_) - lap_b),
            "eikonal": grad2 - 1.0,
            "A": A,
        })
        return {k: (v.reshape(sh) if np.ndim(v) else v) for k, v in out.items()}

    def locate(self, x):
        """Fermi coordinates of chart points; mask of points inside the tube."""
        t, y, ok = self.fermi.inverse(x)
        return t, y, ok & (np.abs(y) < self.delta)


def gaussian_beam(chart: ChartMetric, z, xi, order: int = 0, delta: float | None = None,
                  frame=None, t_pad: float | None = None, plateau: float = PLATEAU,
                  n_axis: int | None = None, path: GeodesicPath | None = None) -> GaussianBeam:
    """Beam along the geodesic through z with unit codirection xi."""
    from .pairing import coframe
    if order not in (0, 1):
        raise UnsupportedOrder(f"order {order} not supported (use 0 or 1)")
    if t_pad is None:
        t_pad = 0.25 * chart_diameter(chart)
    if path is None:
        path = shoot(chart, z, xi, extend=t_pad)
    if frame is None:
        frame = coframe(chart, z, xi)
    fc = fermi_chart(path, frame, delta, t_pad=t_pad)
    n = n_axis or max(96, fc.n_t)
    ad = axis_data(path, fc.sign, fc.t_lo, fc.t_hi, n)
    terms = transport_amplitudes(ad, order)
    return GaussianBeam(fc, ad, dict(terms), order, plateau)


# ---------------------------------------------------------------------------
# quadrature over M in tube coordinates
# ---------------------------------------------------------------------------

def _inside_intervals(beam: GaussianBeam, y: float, n_scan: int = 65):
    """t-intervals where x(t, y) lies in M."""
    fc = beam.fermi
    chart = beam.chart

    def g(t):
        X, _ = fc.forward(np.atleast_1d(t), np.full(np.size(t), y))
        return chart.boundary(X)
    ts = np.linspace(fc.t_lo, fc.t_hi, n_scan)
    gv = g(ts)
    out = []
    start = fc.t_lo if gv[0] < 0 else None
    clipped = gv[0] < 0 or gv[-1] < 0
    for i in range(n_scan - 1):
        if gv[i] < 0 <= gv[i + 1]:
            end = brentq(lambda t: g(t)[0], ts[i], ts[i + 1], xtol=1e-14)
            out.append((start, end))
            start = None
        elif gv[i] >= 0 > gv[i + 1]:
            start = brentq(lambda t: g(t)[0], ts[i], ts[i + 1], xtol=1e-14)
    if start is not None:
        out.append((start, fc.t_hi))
    return out, clipped


def _composite(lo, hi, panels, n):
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(lo, hi, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * x + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * w).ravel()


def _tube_quadrature(beam: GaussianBeam, s, field_fn, n_t: int, per_panel: int, span: float,
                     width: float):
    """sum over M of field_fn(fields) * A dt dy with |y| <= span, y-panels about ``width`` wide."""
    panels = max(2, int(np.ceil(2.0 * span / width)))
    yq, wy = _composite(-span, span, panels, per_panel)
    xt, wt = np.polynomial.legendre.leggauss(n_t)
    total = 0.0
    clipped = False
    for yj, wj in zip(yq, wy):
        ivs, cl = _inside_intervals(beam, yj)
        clipped |= cl
        for a, b in ivs:
            tt = 0.5 * (b - a) * xt + 0.5 * (a + b)
            f = beam.fields(s, tt, np.full_like(tt, yj))
            total += wj * 0.5 * (b - a) * float(np.sum(wt * field_fn(f) * f["A"]))
    return total, clipped


@dataclass
class NormResult:
    value: float
    error: float
    clipped: bool


def _norm(beam, s, key, n_t, n_y, rtol):
    s = complex(s)
    tau = s.real
    imH = np.imag(beam.axis.H)
    span = min(beam.delta, np.sqrt(60.0 / (tau * imH.min())))
    width = 1.5 / np.sqrt(2.0 * tau * imH.max())
    fn = lambda f: np.abs(f[key]) ** 2
    v1, cl = _tube_quadrature(beam, s, fn, n_t, n_y, span, width)
    v2, _ = _tube_quadrature(beam, s, fn, 2 * n_t, 2 * n_y, span, width)
    val = np.sqrt(max(v2, 0.0))
    err = abs(np.sqrt(max(v1, 0.0)) - val)
    if val > 0 and err > rtol * val:
        warnings.warn(f"{key} quadrature error {err:.3g} exceeds {rtol:.0%} of {val:.3g}", ResolutionWarning)
    return NormResult(float(val), float(err), cl)


def residual_norm(beam: GaussianBeam, s, n_t: int = 40, n_y: int = 6, rtol: float = 0.01) -> NormResult:
    """L2(M) norm of (-Delta - s^2) v_s."""
    return _norm(beam, s, "residual", n_t, n_y, rtol)


def l2_norm(beam: GaussianBeam, s, n_t: int = 40, n_y: int = 6, rtol: float = 0.01) -> NormResult:
    return _norm(beam, s, "v", n_t, n_y, rtol)


# ---------------------------------------------------------------------------
# distance phase on simple charts
# ---------------------------------------------------------------------------

class NonSimple(RuntimeError):
    pass


def entry_point(chart: ChartMetric, z, xi, inflate: float = 0.1):
    """Backward boundary hit of the geodesic through (z, xi) on the disk inflated by ``inflate``."""
    big = replace(chart, radius=chart.radius * (1.0 + inflate))
    path = shoot(big, z, xi)
    return path.x(-path.t_in)[0]


def simple_phase(chart: ChartMetric, z, xi, x, inflate: float = 0.1):
    """Geodesic distance from the entry point p(z, xi) to the points x."""
    from .pairing import OutOfNeighborhood, log_map
    p = entry_point(chart, z, xi, inflate)
    x = np.atleast_2d(np.asarray(x, float))
    scale = float(chart.conformal_factor(p))
    out = np.empty(len(x))
    for i, xi_ in enumerate(x):
        try:
            v0, _ = log_map(chart, p, xi_)
        except OutOfNeighborhood as e:
            raise NonSimple(f"two-point shooting failed at {xi_}") from e
        out[i] = scale * np.linalg.norm(v0)
    return out
