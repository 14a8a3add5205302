"""Two-geodesic parametrizations: the pair map xi -> (omega_1, omega_2) with
omega_1 + omega_2 = t0 * xi_hat, covector parallel transport, and the frame map."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geodesic import TrappedGeodesic, nontangential_check, path_crossings, shoot
from .manifold import ChartMetric, cometric_inner, covector_norm, christoffel_at

FLOW_STEPS = 96


class AdmissibilityError(ValueError):
    """Seed covectors violate 0 < <zeta_1, xi_0> < 1."""


class OutOfNeighborhood(ValueError):
    """Point of S*M outside the region where the parametrization is defined."""


def _unit(chart, z, xi):
    return np.asarray(xi, float) / covector_norm(chart, z, xi)


def _jperp(chart, z, xi):
    # g-orthogonal unit covector with positive orientation
    return np.array([-xi[1], xi[0]])


def reflect_cov(chart: ChartMetric, z, zeta1, xi0):
    """Mirror ``zeta1`` across ``xi0``; returns (zeta2, t0)."""
    zeta1 = np.asarray(zeta1, float)
    xi0 = np.asarray(xi0, float)
    p = float(cometric_inner(chart, z, zeta1, xi0))
    if not 0.0 < p < 1.0:
        raise AdmissibilityError(f"<zeta1, xi0> = {p:.6g} not in (0, 1)")
    return 2.0 * p * xi0 - zeta1, 2.0 * p


# ---------------------------------------------------------------------------
# exponential chart at z0
# ---------------------------------------------------------------------------

def exp_flow(chart: ChartMetric, z0, V, nsteps: int = FLOW_STEPS):
    """Flow the geodesics from z0 with initial velocities V (n, 2) to time 1.

    Returns endpoints (n, 2), dx/dv0 (n, 2, 2) and the transport matrices
    (n, 2, 2) whose row r is the transported coordinate covector dx^r|_z0.
    """
    V = np.atleast_2d(np.asarray(V, float))
    S = kernels.flow_rk4(chart.code, chart.params, np.asarray(z0, float), np.ascontiguousarray(V), nsteps)
    return S[:, 0:2], S[:, 4:8].reshape(-1, 2, 2), S[:, 12:16].reshape(-1, 2, 2)


def log_map(chart: ChartMetric, z0, x, tol: float = 1e-13, maxit: int = 30):
    """Initial velocity v0 at z0 with exp_z0(v0) = x, and dx/dv0 there (Newton shooting)."""
    z0 = np.asarray(z0, float)
    x = np.asarray(x, float)
    v = x - z0
    for _ in range(maxit):
        xe, J, _ = exp_flow(chart, z0, v[None])
        r = xe[0] - x
        if np.linalg.norm(r) < tol * (1.0 + np.linalg.norm(x)):
            return v, J[0]
        if abs(np.linalg.det(J[0])) < 1e-10:
            break
        v = v - np.linalg.solve(J[0], r)
    raise OutOfNeighborhood("log map shooting did not converge")


@dataclass(frozen=True)
class PairField:
    """Anchor data of the pair map plus the radius of its valid neighborhood.

    The neighborhood is a ball in S*M for the product distance
    sqrt(d_g(z, z0)^2 + angle^2).
    """
    chart: ChartMetric
    z0: np.ndarray
    xi0: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    t0: float
    radius: float
    coeffs: np.ndarray = field(repr=False)   # zeta1 in normal coordinates at z0

    @property
    def p(self) -> float:
        return 0.5 * self.t0

    def distance(self, z, xi) -> float:
        """Product distance from (z, xi_hat) to the anchor (z0, xi0)."""
        z = np.asarray(z, float)
        v0, _ = log_map(self.chart, self.z0, z)
        dz = float(np.exp(self.chart.phi(self.z0)[0]) * np.linalg.norm(v0))
        u = _unit(self.chart, z, xi)
        P = transport_matrix(self.chart, self.z0, z)
        back = _unit(self.chart, self.z0, np.linalg.solve(P.T, u))
        return float(np.hypot(dz, _angle(back, self.xi0)))

    def contains(self, z, xi) -> bool:
        try:
            return self.distance(z, xi) <= self.radius
        except OutOfNeighborhood:
            return False


def _angle(a, b):
    return float(np.arctan2(a[0] * b[1] - a[1] * b[0], a @ b))


def pair_field(chart: ChartMetric, z0, xi0, zeta1, r_max: float | None = None,
               margin: float = 0.05, n_probe: int = 8) -> PairField:
    """Anchor the pair map at (z0, xi0) with seed zeta1 and bisect for a valid radius."""
    z0 = np.asarray(z0, float)
    xi0 = _unit(chart, z0, xi0)
    zeta1 = _unit(chart, z0, zeta1)
    zeta2, t0 = reflect_cov(chart, z0, zeta1, xi0)
    coeffs = zeta1 * np.exp(-chart.phi(z0)[0])
    field_ = PairField(chart, z0, xi0, zeta1, zeta2, t0, 0.0, coeffs)
    if r_max is None:
        r_max = 0.5 * float(np.exp(chart.phi(z0)[0])) * (chart.radius - np.linalg.norm(z0))
    rng = np.random.default_rng(12345)
    dirs = rng.uniform(0, 2 * np.pi, (n_probe, 2))

    def ok(r):
        trial = PairField(chart, z0, xi0, zeta1, zeta2, t0, r, coeffs)
        for a, b in dirs:
            for frac in (1.0, 0.5):
                try:
                    z, xi = _sample_at(trial, r * frac, a, b)
                    w1, w2 = pair_map(trial, z, xi, check=False)
                    q = float(cometric_inner(chart, z, _gamma(trial, z), _unit(chart, z, xi)))
                    if q * q > 1.0 - margin:
                        return False
                    pair_map_pt(trial, z, xi, check=False)
                    frame_map(chart, z0, coframe(chart, z0, xi0), z, xi)
                except (OutOfNeighborhood, ValueError):
                    return False
        return True

    lo, hi = 0.0, r_max
    if ok(hi):
        lo = hi
    else:
        for _ in range(24):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return PairField(chart, z0, xi0, zeta1, zeta2, t0, lo, coeffs)


def _sample_at(field_: PairField, r, a, b):
    """Point of S*M at product distance r from the anchor: base offset angle a, split b."""
    chart = field_.chart
    dz, dth = r * np.cos(b), r * np.sin(b)
    e = np.exp(-chart.phi(field_.z0)[0])
    v0 = e * dz * np.array([np.cos(a), np.sin(a)])
    x, _, P = exp_flow(chart, field_.z0, v0[None])
    c, s = np.cos(dth), np.sin(dth)
    xi_back = np.array([c * field_.xi0[0] - s * field_.xi0[1], s * field_.xi0[0] + c * field_.xi0[1]])
    xi = P[0].T @ xi_back
    return x[0], _unit(chart, x[0], xi)


def sample_neighborhood(field_: PairField, n: int, rng, frac: float = 1.0):
    """``n`` random (z, xi_hat) in the ball of radius frac*radius (uniform in the product disk)."""
    out = []
    for _ in range(n):
        r = field_.radius * frac * np.sqrt(rng.uniform())
        out.append(_sample_at(field_, r, rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)))
    return out


def _gamma(field_: PairField, z):
    chart = field_.chart
    v0, J = log_map(chart, field_.z0, z)
    # dx/dy = J * e^{-phi(z0)}; dy/dx is its inverse
    dydx = np.linalg.inv(J) * np.exp(chart.phi(field_.z0)[0])
    return _unit(chart, z, field_.coeffs @ dydx)


def pair_map(field_: PairField, z, xi, check: bool = True):
    """(omega_1, omega_2) at z for the codirection of ``xi`` (normal-coordinate construction)."""
    chart = field_.chart
    z = np.asarray(z, float)
    if check and not field_.contains(z, xi):
        raise OutOfNeighborhood("(z, xi) outside the pair-map neighborhood")
    w = _unit(chart, z, xi)
    gam = _gamma(field_, z)
    q = float(cometric_inner(chart, z, gam, w))
    if q * q >= 1.0:
        raise OutOfNeighborhood("gamma(z) aligned with xi")
    p = field_.p
    c = p * np.sqrt((1.0 - q * q) / (1.0 - p * p))
    w1 = (gam - q * w + c * w) / np.sqrt(1.0 - q * q + c * c)
    w2 = 2.0 * float(cometric_inner(chart, z, w1, w)) * w - w1
    return w1, w2


# ---------------------------------------------------------------------------
# parallel transport
# ---------------------------------------------------------------------------

def transport_matrix(chart: ChartMetric, z0, z):
    """Matrix P with P.T @ c = parallel transport of covector c from z0 to z along the radial geodesic."""
    v0, _ = log_map(chart, z0, z)
    _, _, P = exp_flow(chart, z0, v0[None])
    return P[0]


def parallel_transport(path, covector, t1: float, t0: float = 0.0, rtol: float = 1e-11):
    """Transport a covector at path time t0 to t1 along a GeodesicPath."""
    from scipy.integrate import solve_ivp
    chart = path.chart

    def f(t, c):
        s = path.state(t)[0]
        G = christoffel_at(chart, s[:2])     # [k, i, j]
        return np.einsum("ijk,j,i->k", G, s[2:4], c)
    if t1 == t0:
        return np.asarray(covector, float).copy()
    sol = solve_ivp(f, (t0, t1), np.asarray(covector, float), method="DOP853", rtol=rtol, atol=1e-14)
    return sol.y[:, -1]


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _rotation_between(chart, z, a, b):
    """Euclidean rotation taking unit covector a to b; errors at the antipode."""
    th = _angle(a, b)
    if abs(abs(th) - np.pi) < 1e-12:
        raise OutOfNeighborhood("rotation between antipodal covectors is not defined")
    return _rot(th)


def pair_map_pt(field_: PairField, z, xi, check: bool = True):
    """(omega_1, omega_2) via transport to z0, planar rotation of the seeds, transport back."""
    chart = field_.chart
    z = np.asarray(z, float)
    if check and not field_.contains(z, xi):
        raise OutOfNeighborhood("(z, xi) outside the pair-map neighborhood")
    w = _unit(chart, z, xi)
    P = transport_matrix(chart, field_.z0, z)
    back = _unit(chart, field_.z0, np.linalg.solve(P.T, w))
    O = _rotation_between(chart, field_.z0, field_.xi0, back)
    w1 = P.T @ (O @ field_.zeta1)
    w2 = P.T @ (O @ field_.zeta2)
    return w1, w2


# ---------------------------------------------------------------------------
# coframes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coframe:
    base: np.ndarray
    F1: np.ndarray
    F2: np.ndarray

    def gram(self, chart):
        F = [self.F1, self.F2]
        return np.array([[float(cometric_inner(chart, self.base, a, b)) for b in F] for a in F])

    def orientation(self) -> float:
        return float(np.sign(self.F1[0] * self.F2[1] - self.F1[1] * self.F2[0]))


def coframe(chart: ChartMetric, z, xi) -> Coframe:
    """Positively oriented orthonormal coframe with first covector xi_hat."""
    u = _unit(chart, z, xi)
    return Coframe(np.asarray(z, float), u, _jperp(chart, z, u))


def frame_map(chart: ChartMetric, z0, F0: Coframe, z, xi) -> Coframe:
    """Transport xi to z0, rotate F0 onto it, transport the rotated frame back to z."""
    z = np.asarray(z, float)
    w = _unit(chart, z, xi)
    P = transport_matrix(chart, z0, z)
    back = _unit(chart, z0, np.linalg.solve(P.T, w))
    O = _rotation_between(chart, z0, F0.F1, back)
    F2 = P.T @ (O @ F0.F2)
    return Coframe(z, w, F2)


# ---------------------------------------------------------------------------
# admissibility of a geodesic pair
# ---------------------------------------------------------------------------

@dataclass
class PairVerdict:
    admissible: bool
    crossings: list
    reasons: list
    paths: tuple = field(repr=False, default=())


def admissible_check(chart: ChartMetric, z, w1, w2, spacing: float = 0.01, eps_x: float = 1e-6,
                     angle_min: float = 0.1) -> PairVerdict:
    """Both geodesics nontangential and meeting only at their common base point."""
    z = np.asarray(z, float)
    u1, u2 = _unit(chart, z, w1), _unit(chart, z, w2)
    if abs(abs(float(cometric_inner(chart, z, u1, u2))) - 1.0) < 1e-12:
        return PairVerdict(False, [], ["collinear-directions"])
    reasons = []
    try:
        pa, pb = shoot(chart, z, u1), shoot(chart, z, u2)
    except TrappedGeodesic:
        return PairVerdict(False, [], ["trapped"])
    if not (nontangential_check(pa, angle_min).nontangential and nontangential_check(pb, angle_min).nontangential):
        reasons.append("tangential")
    cross = path_crossings(pa, pb, eps_x=eps_x, spacing=spacing)
    if len(cross) != 1 or max(abs(cross[0][0]), abs(cross[0][1])) > 1e-6:
        reasons.append("multiple-crossings" if len(cross) > 1 else "crossing-mismatch")
    return PairVerdict(not reasons, cross, reasons, (pa, pb))
