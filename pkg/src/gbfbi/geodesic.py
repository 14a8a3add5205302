"""Geodesic flow, boundary exits, Jacobi fields and the strict regularity audit."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import kernels
from .manifold import (ChartMetric, covector_norm, curvature_at, inverse_metric_at, metric_at,
                       rotate_covector, sharp, vector_norm)

RTOL = 1e-11
ATOL = 1e-12
ANGLE_MIN = 0.1
EPS_X = 1e-6
T_SEP = 1e-2


class TrappedGeodesic(RuntimeError):
    """No boundary hit before the time limit."""


def _rhs(chart: ChartMetric):
    code, p = chart.code, chart.params

    def f(t, s):
        j = kernels.phi_jet(code, p, s[0], s[1])
        f1, f2 = j[1], j[2]
        K = -np.exp(-2.0 * j[0]) * (j[3] + j[5])
        pd = f1 * s[2] + f2 * s[3]
        vv = s[2] * s[2] + s[3] * s[3]
        return [s[2], s[3], -2.0 * pd * s[2] + vv * f1, -2.0 * pd * s[3] + vv * f2, s[5], -K * s[4]]
    return f


def chart_diameter(chart: ChartMetric) -> float:
    """Upper estimate of the g-diameter of M from a polar sample."""
    r = np.linspace(0, chart.radius, 41)
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    pts = np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], -1).reshape(-1, 2)
    return 2.0 * chart.radius * float(chart.conformal_factor(pts).max())


@dataclass
class GeodesicPath:
    """Unit-speed geodesic through ``z`` (time 0), clipped to M at [-t_in, t_out].

    ``extend`` > 0 keeps integrating past both boundary hits; ``eval`` is then
    valid on [-t_in - extend, t_out + extend].
    """
    chart: ChartMetric
    z: np.ndarray
    xi: np.ndarray
    t_in: float
    t_out: float
    extend: float
    entry_angle: float
    exit_angle: float
    rtol: float
    _pieces: list = field(repr=False, default_factory=list)

    @property
    def t_min(self):
        return -self.t_in - self.extend

    @property
    def t_max(self):
        return self.t_out + self.extend

    def state(self, t):
        """Rows ``(x1, x2, v1, v2, j, j')`` at the times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, 6))
        done = np.zeros(t.size, bool)
        for lo, hi, sol in self._pieces:
            m = (~done) & (t >= lo - 1e-13) & (t <= hi + 1e-13)
            if np.any(m):
                out[m] = sol(t[m]).T
                done |= m
        if not np.all(done):
            raise ValueError("time outside the integrated span")
        return out

    def x(self, t):
        return self.state(t)[:, 0:2]

    def v(self, t):
        return self.state(t)[:, 2:4]

    def samples(self, n: int | None = None, clip: bool = True, spacing: float = 0.01):
        lo, hi = (-self.t_in, self.t_out) if clip else (self.t_min, self.t_max)
        if n is None:
            n = max(64, int(np.ceil((hi - lo) / spacing)) + 1)
        t = np.linspace(lo, hi, n)
        return t, self.state(t)

    def reversed(self) -> "GeodesicPath":
        pieces = [(-hi, -lo, _Flip(sol)) for lo, hi, sol in self._pieces]
        return GeodesicPath(self.chart, self.z, -self.xi, self.t_out, self.t_in, self.extend,
                            self.exit_angle, self.entry_angle, self.rtol, pieces)


class _Flip:
    def __init__(self, sol):
        self.sol = sol

    def __call__(self, t):
        s = self.sol(-np.asarray(t))
        s = np.array(s, copy=True)
        s[2:4] *= -1.0
        s[4] *= -1.0
        return s


def _boundary_angle(chart, x, v):
    nb = chart.boundary_grad(x)
    gi = inverse_metric_at(chart, x)
    num = abs(float(nb @ v))
    den = float(vector_norm(chart, x, v)) * float(np.sqrt(nb @ gi @ nb))
    return float(np.arcsin(min(1.0, num / den)))


def _integrate(chart, s0, direction, t_limit, extend, rtol):
    f = _rhs(chart)

    def hit(t, s):
        return s[0] * s[0] + s[1] * s[1] - chart.radius ** 2
    hit.terminal = True
    hit.direction = 1.0

    sol = solve_ivp(f, (0.0, direction * t_limit), s0, method="DOP853", rtol=rtol, atol=ATOL,
                    events=hit, dense_output=True)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise TrappedGeodesic(f"no boundary exit within time {t_limit:g}")
    te = float(sol.t_events[0][0])
    se = sol.y_events[0][0]
    pieces = [(min(0.0, te), max(0.0, te), sol.sol)]
    if extend > 0:
        ext = solve_ivp(f, (te, te + direction * extend), se, method="DOP853", rtol=rtol, atol=ATOL,
                        dense_output=True)
        lo, hi = sorted((te, te + direction * extend))
        pieces.append((lo, hi, ext.sol))
    return abs(te), se, pieces


def shoot(chart: ChartMetric, z, xi, extend: float = 0.0, rtol: float = RTOL,
          t_limit: float | None = None) -> GeodesicPath:
    """Integrate the geodesic with initial unit codirection ``xi`` at ``z`` both ways to the boundary."""
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if chart.boundary(z) >= 0:
        raise ValueError("base point must be interior")
    nrm = float(covector_norm(chart, z, xi))
    if abs(nrm - 1.0) > 1e-9:
        raise ValueError(f"codirection must be a unit covector (|xi|_g = {nrm})")
    v = sharp(chart, z, xi)
    if t_limit is None:
        t_limit = 10.0 * chart_diameter(chart)
    s0 = np.array([z[0], z[1], v[0], v[1], 0.0, 1.0])
    t_out, s_out, fw = _integrate(chart, s0, 1.0, t_limit, extend, rtol)
    t_in, s_in, bw = _integrate(chart, s0, -1.0, t_limit, extend, rtol)
    return GeodesicPath(chart, z, xi, t_in, t_out, extend,
                        _boundary_angle(chart, s_in[:2], s_in[2:4]),
                        _boundary_angle(chart, s_out[:2], s_out[2:4]), rtol, bw + fw)


def geodesic_flow(chart: ChartMetric, x0, v0, t1: float, rtol: float = 1e-12):
    """Geodesic from (x0, v0) up to time t1 (no boundary handling); returns dense solution."""
    s0 = np.array([x0[0], x0[1], v0[0], v0[1], 0.0, 1.0])
    return solve_ivp(_rhs(chart), (0.0, t1), s0, method="DOP853", rtol=rtol, atol=1e-13,
                     dense_output=True)


def speed_drift(path: GeodesicPath, n: int = 400) -> float:
    t, s = path.samples(n, clip=False)
    return float(np.max(np.abs(vector_norm(path.chart, s[:, :2], s[:, 2:4]) - 1.0)))


# ---------------------------------------------------------------------------
# Definition checks
# ---------------------------------------------------------------------------

@dataclass
class Transversality:
    entry_angle: float
    exit_angle: float
    nontangential: bool


def nontangential_check(path: GeodesicPath, angle_min: float = ANGLE_MIN) -> Transversality:
    ok = path.entry_angle >= angle_min and path.exit_angle >= angle_min
    return Transversality(path.entry_angle, path.exit_angle, bool(ok))


def jacobi_scan(path: GeodesicPath, t0: float = 0.0, n: int | None = None) -> list:
    """Times in [-t_in, t_out] where the normal Jacobi field vanishing at t0 vanishes again."""
    if t0 == 0.0:
        jf = lambda t: path.state(t)[:, 4]
    else:
        jf = _jacobi_from(path, t0)
    times = []
    for lo, hi in ((t0, path.t_out), (t0, -path.t_in)):
        if abs(hi - lo) < 1e-12:
            continue
        m = n or max(200, int(abs(hi - lo) / 0.005))
        grid = np.linspace(lo, hi, m)[1:]
        vals = jf(grid)
        for k in range(len(grid) - 1):
            if vals[k] == 0.0:
                times.append(float(grid[k]))
            elif vals[k] * vals[k + 1] < 0:
                a, b = sorted((grid[k], grid[k + 1]))
                times.append(float(brentq(lambda t: jf(np.array([t]))[0], a, b, xtol=1e-13)))
    return sorted(times)


def _jacobi_from(path, t0):
    chart = path.chart

    def f(t, s):
        K = curvature_at(chart, path.x(t)[0])
        return [s[1], -K * s[0]]
    sols = []
    for hi in (path.t_out, -path.t_in):
        if abs(hi - t0) > 1e-12:
            sols.append(solve_ivp(f, (t0, hi), [0.0, 1.0], rtol=1e-11, atol=1e-13, dense_output=True).sol)

    def jf(t):
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape)
        for i, ti in enumerate(t):
            for sol in sols:
                if min(sol.t_min, sol.t_max) - 1e-13 <= ti <= max(sol.t_min, sol.t_max) + 1e-13:
                    out[i] = sol(ti)[0]
                    break
        return out
    return jf


def _refine_crossing(pa, pb, ta, tb, bounds_a, bounds_b):
    # Newton on x_a(t1) = x_b(t2) with the velocities as Jacobian
    u = np.array([ta, tb], dtype=float)
    for _ in range(30):
        sa, sb = pa.state(u[0])[0], pb.state(u[1])[0]
        r = sa[:2] - sb[:2]
        J = np.column_stack([sa[2:4], -sb[2:4]])
        if abs(np.linalg.det(J)) < 1e-14 * (1 + np.abs(J).max() ** 2):
            break
        du = np.linalg.solve(J, -r)
        u += du
        u[0] = np.clip(u[0], *bounds_a)
        u[1] = np.clip(u[1], *bounds_b)
        if np.abs(du).max() < 1e-14:
            break
    r = pa.x(u[0])[0] - pb.x(u[1])[0]
    d = float(np.linalg.norm(r)) * float(pa.chart.conformal_factor(pa.x(u[0])[0]))
    return float(u[0]), float(u[1]), d


def _crossings(pa, pb, same, eps_x, t_sep, spacing):
    ta, sa = pa.samples(spacing=spacing)
    tb, sb = (ta, sa) if same else pb.samples(spacing=spacing)
    h = max(np.diff(ta).max(), np.diff(tb).max())
    seg = max(np.linalg.norm(np.diff(sa[:, :2], axis=0), axis=1).max(),
              np.linalg.norm(np.diff(sb[:, :2], axis=0), axis=1).max())
    gap = max(2, int(np.ceil(t_sep / h)) + 1) if same else 0
    ii, jj, _ = kernels.close_pairs(np.ascontiguousarray(sa[:, :2]), np.ascontiguousarray(sb[:, :2]),
                                    0.25 * seg, same, gap)
    found = []
    for i, j in zip(ii, jj):
        ba = (ta[max(i - 1, 0)], ta[min(i + 2, len(ta) - 1)])
        bb = (tb[max(j - 1, 0)], tb[min(j + 2, len(tb) - 1)])
        t1, t2, d = _refine_crossing(pa, pb, 0.5 * (ta[i] + ta[i + 1]), 0.5 * (tb[j] + tb[j + 1]), ba, bb)
        if d >= eps_x:
            continue
        if same and abs(t1 - t2) <= t_sep:
            continue
        if same and t1 > t2:
            t1, t2 = t2, t1
        if any(abs(t1 - a) < 4 * h and abs(t2 - b) < 4 * h for a, b in found):
            continue
        found.append((t1, t2))
    return sorted(found)


def self_intersection_scan(path: GeodesicPath, eps_x: float = EPS_X, t_sep: float = T_SEP,
                           spacing: float = 0.01) -> list:
    """Pairs (t, t') with t < t' - t_sep and x(t) = x(t') inside M."""
    return _crossings(path, path, True, eps_x, t_sep, spacing)


def path_crossings(pa: GeodesicPath, pb: GeodesicPath, eps_x: float = EPS_X,
                   spacing: float = 0.01) -> list:
    """All (t_a, t_b) with x_a(t_a) = x_b(t_b) inside M."""
    return _crossings(pa, pb, False, eps_x, 0.0, spacing)


def brute_force_crossings(pa: GeodesicPath, pb: GeodesicPath | None, n: int, tol: float,
                          t_sep: float = T_SEP) -> list:
    """Reference O(n^2) proximity scan; returns clusters of near-coincident sample pairs."""
    same = pb is None
    ta, sa = pa.samples(n)
    tb, sb = (ta, sa) if same else pb.samples(n)
    pts = []
    for start in range(0, len(ta), 512):
        D = np.linalg.norm(sa[start:start + 512, None, :2] - sb[None, :, :2], axis=-1)
        i, j = np.nonzero(D < tol)
        pts += [(ta[a + start], tb[b]) for a, b in zip(i, j) if not same or tb[b] - ta[a + start] > t_sep]
    clusters = []
    for p in pts:
        for c in clusters:
            if abs(c[0] - p[0]) < 5 * tol and abs(c[1] - p[1]) < 5 * tol:
                break
        else:
            clusters.append(p)
    return clusters


@dataclass
class SuVerdict:
    passed: bool
    witness: np.ndarray | None
    reasons: list
    conjugate_times: list
    details: list = field(default_factory=list)


def su_check(chart: ChartMetric, z, eta, n_dir: int = 2, angle_min: float = ANGLE_MIN,
             eps_x: float = EPS_X, t_sep: float = T_SEP) -> SuVerdict:
    """Look for a unit covector orthogonal to ``eta`` whose geodesic is nontangential,
    free of points conjugate to ``z`` and not self-intersecting."""
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    eta = eta / covector_norm(chart, z, eta)
    perp = rotate_covector(chart, z, eta, np.pi / 2)
    candidates = [perp, -perp][:max(1, min(n_dir, 2))]
    reasons, conj, details = [], [], []
    for xi in candidates:
        why = []
        try:
            path = shoot(chart, z, xi)
        except TrappedGeodesic:
            why.append("trapped")
            details.append((xi, why, []))
            reasons += [r for r in why if r not in reasons]
            continue
        if not nontangential_check(path, angle_min).nontangential:
            why.append("tangential")
        ct = jacobi_scan(path)
        if ct:
            why.append("conjugate-point")
            conj += [t for t in ct if not any(abs(t - c) < 1e-9 for c in conj)]
        if self_intersection_scan(path, eps_x, t_sep):
            why.append("self-intersection")
        details.append((xi, why, ct))
        if not why:
            return SuVerdict(True, xi, [], sorted(conj), details)
        reasons += [r for r in why if r not in reasons]
    return SuVerdict(False, None, reasons, sorted(conj), details)
