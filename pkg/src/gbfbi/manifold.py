"""Planar charts of compact 2D Riemannian manifolds with a disk boundary."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

FAMILIES = {"euclidean": kernels.EUCLIDEAN,
            "constant-curvature": kernels.CONSTANT_CURVATURE,
            "conformal-bump": kernels.CONFORMAL_BUMP}

FD_STEP = 1e-4


class DomainError(ValueError):
    """Point outside the chart domain."""


class SingularMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ChartMetric:
    """Conformally flat metric ``exp(2 phi) I`` on a planar chart, M = {|x| <= R}.

    ``family`` is one of ``euclidean``, ``constant-curvature`` (param ``K``)
    or ``conformal-bump`` (params ``amplitude``, ``center``, ``width``).
    """
    family: str = "euclidean"
    radius: float = 1.0
    K: float = 0.0
    amplitude: float = 0.0
    center: tuple = (0.0, 0.0)
    width: float = 1.0
    code: int = field(init=False)
    params: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        code = FAMILIES[self.family]
        if code == kernels.CONSTANT_CURVATURE:
            p = (self.K, 0.0, 0.0, 0.0)
            if self.K < 0 and self.radius >= 2.0 / np.sqrt(-self.K):
                raise DomainError("disk exceeds the constant-curvature chart")
        elif code == kernels.CONFORMAL_BUMP:
            if not self.width > 0:
                raise ValueError("bump width must be positive")
            p = (self.amplitude, self.center[0], self.center[1], self.width)
        else:
            p = (0.0, 0.0, 0.0, 0.0)
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "params", np.array(p, dtype=float))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def from_spec(cls, spec: dict, radius: float = 1.0) -> "ChartMetric":
        fam = spec.get("family", "euclidean")
        if fam == "constant-curvature":
            return cls(fam, radius, K=float(spec["K"]))
        if fam == "conformal-bump":
            return cls(fam, radius, amplitude=float(spec["amplitude"]),
                       center=tuple(spec.get("center", (0.0, 0.0))), width=float(spec["width"]))
        return cls(fam, radius)

    # -- scalar fields ------------------------------------------------------
    def in_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.all(np.isfinite(x), axis=-1)
        if self.code == kernels.CONSTANT_CURVATURE and self.K < 0:
            ok &= np.sum(x * x, axis=-1) < 4.0 / -self.K
        return ok

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(self.in_domain(x)):
            raise DomainError(f"point outside chart domain: {x}")
        return x

    def phi(self, x, order: int = 0):
        """Conformal exponent and its partial derivatives (list up to ``order``)."""
        x = np.asarray(x, dtype=float)
        j = kernels.phi_jet(self.code, self.params, x[..., 0], x[..., 1])
        j = [np.asarray(v, dtype=float) + 0.0 * x[..., 0] for v in j]
        out = [j[0], np.stack([j[1], j[2]], -1)]
        if order >= 2:
            out.append(np.stack([np.stack([j[3], j[4]], -1), np.stack([j[4], j[5]], -1)], -2))
        if order >= 3:
            t = np.empty(x.shape[:-1] + (2, 2, 2))
            t[..., 0, 0, 0] = j[6]
            t[..., 0, 0, 1] = t[..., 0, 1, 0] = t[..., 1, 0, 0] = j[7]
            t[..., 0, 1, 1] = t[..., 1, 0, 1] = t[..., 1, 1, 0] = j[8]
            t[..., 1, 1, 1] = j[9]
            out.append(t)
        return out[:order + 1] if order < 1 else out

    def boundary(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.sum(x * x, axis=-1) - self.radius ** 2

    def boundary_grad(self, x) -> np.ndarray:
        return 2.0 * np.asarray(x, dtype=float)

    def inside(self, x) -> np.ndarray:
        return self.boundary(x) <= 0.0

    def conformal_factor(self, x) -> np.ndarray:
        """exp(phi): ratio of g-length to euclidean length."""
        return np.exp(self.phi(x)[0])


def metric_at(chart: ChartMetric, x) -> np.ndarray:
    x = chart._check(x)
    e = np.exp(2.0 * chart.phi(x)[0])
    return e[..., None, None] * np.eye(2)


def inverse_metric_at(chart: ChartMetric, x) -> np.ndarray:
    x = chart._check(x)
    e = np.exp(-2.0 * chart.phi(x)[0])
    return e[..., None, None] * np.eye(2)


def christoffel_at(chart: ChartMetric, x, method: str = "analytic", h: float = FD_STEP) -> np.ndarray:
    """Christoffel symbols ``G[..., k, i, j] = Gamma^k_{ij}``.

    ``method="fd"`` differentiates :func:`metric_at` by central differences
    (Richardson-extrapolated with steps h and h/2).
    """
    x = chart._check(x)
    if method == "analytic":
        d = chart.phi(x, 1)[1]
        I = np.eye(2)
        G = (I[:, :, None] * d[..., None, None, :] + I[:, None, :] * d[..., None, :, None]
             - I[None, :, :] * d[..., :, None, None])
        return G
    if method != "fd":
        raise ValueError(method)

    def dg(step):
        out = np.empty(x.shape[:-1] + (2, 2, 2))  # [..., l, i, j] = d_l g_ij
        for l in range(2):
            e = np.zeros(2)
            e[l] = step
            out[..., l, :, :] = (metric_at(chart, x + e) - metric_at(chart, x - e)) / (2 * step)
        return out

    d1, d2 = dg(h), dg(h / 2)
    D = (4.0 * d2 - d1) / 3.0
    g = metric_at(chart, x)
    if np.any(np.linalg.det(g) <= 0):
        raise SingularMetricError("metric not positive definite")
    gi = np.linalg.inv(g)
    # Gamma_{l i j} = 1/2 (d_i g_lj + d_j g_li - d_l g_ij)
    low = 0.5 * (np.einsum("...ilj->...lij", D) + np.einsum("...jli->...lij", D) - D)
    return np.einsum("...kl,...lij->...kij", gi, low)


def curvature_at(chart: ChartMetric, x) -> np.ndarray:
    """Gauss curvature ``K = -exp(-2 phi) * Laplacian(phi)``."""
    x = chart._check(x)
    p, _, H = chart.phi(x, 2)
    return -np.exp(-2.0 * p) * (H[..., 0, 0] + H[..., 1, 1])


def curvature_grad(chart: ChartMetric, x) -> np.ndarray:
    x = chart._check(x)
    p, d, H, T = chart.phi(x, 3)
    lap = H[..., 0, 0] + H[..., 1, 1]
    dlap = T[..., 0, 0, :] + T[..., 1, 1, :]
    e = np.exp(-2.0 * p)
    return (2.0 * e * lap)[..., None] * d - e[..., None] * dlap


def curvature_fd(chart: ChartMetric, x, h: float = 1e-3) -> np.ndarray:
    """Curvature from finite differences of the metric (Brioschi form for conformal charts)."""
    x = np.asarray(x, dtype=float)
    lam = lambda y: 0.5 * np.log(metric_at(chart, y)[..., 0, 0])
    e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
    lap = (lam(x + e1) + lam(x - e1) + lam(x + e2) + lam(x - e2) - 4 * lam(x)) / h ** 2
    return -np.exp(-2.0 * lam(x)) * lap


# ---------------------------------------------------------------------------
# covectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointedCovector:
    base: np.ndarray
    covector: np.ndarray
    norm: float

    @classmethod
    def make(cls, chart: ChartMetric, z, xi) -> "PointedCovector":
        z = np.asarray(z, dtype=float)
        xi = np.asarray(xi, dtype=float)
        n = covector_norm(chart, z, xi)
        if not n > 0:
            raise ValueError("zero covector")
        return cls(z, xi, float(n))

    def unit(self) -> "PointedCovector":
        return PointedCovector(self.base, self.covector / self.norm, 1.0)


def covector_norm(chart, z, xi):
    gi = inverse_metric_at(chart, z)
    return np.sqrt(np.einsum("...i,...ij,...j->...", xi, gi, xi))


def cometric_inner(chart, z, a, b):
    gi = inverse_metric_at(chart, z)
    return np.einsum("...i,...ij,...j->...", a, gi, b)


def vector_norm(chart, z, v):
    g = metric_at(chart, z)
    return np.sqrt(np.einsum("...i,...ij,...j->...", v, g, v))


def sharp(chart, z, xi):
    return np.einsum("...ij,...j->...i", inverse_metric_at(chart, z), xi)


def flat(chart, z, v):
    return np.einsum("...ij,...j->...i", metric_at(chart, z), v)


def unit_covector(chart, z, angle):
    """Unit covector at z whose euclidean direction makes ``angle`` with e1."""
    d = np.array([np.cos(angle), np.sin(angle)])
    return d / covector_norm(chart, z, d)


def rotate_covector(chart, z, xi, angle):
    """Rotate a covector by ``angle`` in the g-orthonormal sense (positive = counterclockwise)."""
    # conformal charts: euclidean rotation of components is a g-isometry
    c, s = np.cos(angle), np.sin(angle)
    xi = np.asarray(xi, dtype=float)
    return np.array([c * xi[0] - s * xi[1], s * xi[0] + c * xi[1]])


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass
class IntegrationResult:
    value: complex
    error: float
    converged: bool
    nodes: int


def _disk_rule(center, radius, n):
    r, wr = np.polynomial.legendre.leggauss(n)
    r = 0.5 * radius * (r + 1.0)
    wr = 0.5 * radius * wr
    m = 2 * n
    th, wt = np.polynomial.legendre.leggauss(m)
    th = np.pi * (th + 1.0)
    wt = np.pi * wt
    R, TH = np.meshgrid(r, th, indexing="ij")
    W = (wr[:, None] * wt[None, :]) * R
    pts = np.stack([center[0] + R * np.cos(TH), center[1] + R * np.sin(TH)], -1)
    return pts.reshape(-1, 2), W.ravel()


def integrate(chart: ChartMetric, integrand, region=None, n: int = 32, rtol: float = 1e-10,
              atol: float = 1e-14) -> IntegrationResult:
    """Integrate ``integrand(x)`` against dV_g over a disk region.

    ``region`` is ``(center, radius)``; default is M itself. Tensor
    Gauss-Legendre in polar coordinates; the error estimate is the change
    under one node doubling.
    """
    center, radius = region if region is not None else ((0.0, 0.0), chart.radius)

    def rule(m):
        pts, w = _disk_rule(center, radius, m)
        vol = np.sqrt(np.linalg.det(metric_at(chart, pts)))
        return np.sum(np.asarray(integrand(pts)) * vol * w)

    coarse = rule(n)
    fine = rule(2 * n)
    err = float(abs(fine - coarse))
    ok = err <= max(atol, rtol * abs(fine))
    return IntegrationResult(complex(fine) if np.iscomplexobj(fine) else float(fine), err, bool(ok), 2 * n)


def gauss_box(lo, hi, n):
    """Gauss-Legendre nodes/weights on [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w
