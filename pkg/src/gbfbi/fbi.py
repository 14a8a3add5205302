"""Beam-product probes, phase audit, the localized transform and decay classification."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_jn

from .beam import GaussianBeam, gaussian_beam
from .geodesic import TrappedGeodesic
from .manifold import ChartMetric, covector_norm, rotate_covector
from .pairing import (AdmissibilityError, OutOfNeighborhood, admissible_check, coframe, frame_map,
                      pair_field, pair_map, sample_neighborhood)

TAU_GRID = (25.0, 35.0, 50.0, 71.0, 100.0, 141.0, 200.0, 283.0, 400.0)
S_SMOOTH = 5.0
S_SING = 2.5
REL_FLOOR = 1e-14

SMOOTH, SINGULAR, INCONCLUSIVE, UNTESTABLE = "SMOOTH", "SINGULAR", "INCONCLUSIVE", "UNTESTABLE"


class ProbeError(RuntimeError):
    """No admissible neighborhood around the requested anchor."""


@dataclass
class ProbeEntry:
    z: np.ndarray
    xi: np.ndarray
    omega: tuple
    frames: tuple
    beams: tuple
    mu: float = float("nan")     # min eigenvalue of the Hessian of Im Phi at z (g-normalized)
    _profile: object = field(default=None, repr=False)


class BeamCache(dict):
    """Beams keyed by (base point, codirection, order, delta); shared between probes."""

    def get_beam(self, chart, z, w, order, delta, frame):
        key = (chart, tuple(np.round(z, 12)), tuple(np.round(w, 12)), order, delta)
        if key not in self:
            self[key] = gaussian_beam(chart, z, w, order=order, delta=delta, frame=frame)
        return self[key]


@dataclass
class FbiProbe:
    chart: ChartMetric
    field: object
    lam: tuple
    order: int
    delta: float | None
    radius: float
    cache: BeamCache = field(repr=False, default_factory=BeamCache)
    entries: dict = field(repr=False, default_factory=dict)

    @property
    def t0(self) -> float:
        return self.field.t0

    @property
    def anchor(self) -> ProbeEntry:
        return self.entry(self.field.z0, self.field.xi0)

    def entry(self, z, xi) -> ProbeEntry:
        z = np.asarray(z, float)
        xi = np.asarray(xi, float) / covector_norm(self.chart, z, xi)
        key = (tuple(np.round(z, 12)), tuple(np.round(xi, 12)))
        if key in self.entries:
            return self.entries[key]
        at_anchor = np.allclose(z, self.field.z0, atol=1e-14) and np.allclose(xi, self.field.xi0, atol=1e-14)
        if not at_anchor and self.field.distance(z, xi) > self.radius:
            raise OutOfNeighborhood("covector outside the probe neighborhood")
        if at_anchor:
            w1, w2 = self.field.zeta1, self.field.zeta2
        else:
            w1, w2 = pair_map(self.field, z, xi, check=False)
        z0 = self.field.z0
        frames = tuple(frame_map(self.chart, z0, coframe(self.chart, z0, s), z, w)
                       for s, w in ((self.field.zeta1, w1), (self.field.zeta2, w2)))
        beams = tuple(self.cache.get_beam(self.chart, z, w, self.order, self.delta, f)
                      for w, f in zip((w1, w2), frames))
        e = ProbeEntry(z, xi, (w1, w2), frames, beams)
        e.mu = _hess_im_min(self, e)
        self.entries[key] = e
        return e

    # --- evaluation --------------------------------------------------------
    def _beam_data(self, e: ProbeEntry, x):
        out = []
        for b in e.beams:
            t, y, ok = b.locate(x)
            out.append((b, t, y, ok))
        return out

    def phase(self, e: ProbeEntry, x, xi_scale: float = 1.0):
        """Phi = |xi| (Theta_1 + Theta_2) and the mask of points inside both tubes."""
        x = np.asarray(x, float)
        total = np.zeros(x.shape[:-1], complex)
        mask = np.ones(x.shape[:-1], bool)
        for b, t, y, ok in self._beam_data(e, x):
            total = total + np.where(ok, b.phase(t, y), 0.0)
            mask &= ok
        return xi_scale * total, mask

    def u(self, e: ProbeEntry, tau: float, x):
        """u_tau(xi, x) = v_{s1} w_{s2} with s_j = tau + i lambda_j."""
        x = np.asarray(x, float)
        sh = x.shape[:-1]
        x = x.reshape(-1, 2)
        val = np.ones(len(x), complex)
        live = np.arange(len(x))
        for b, lam in zip(e.beams, self.lam):
            # the second beam is only needed where the first is nonzero
            t, y, ok = b.locate(x[live])
            val[live[~ok]] = 0.0
            live = live[ok]
            if live.size:
                val[live] *= b.fields(complex(tau, lam), t[ok], y[ok], derivs=0)["v"]
        return val.reshape(sh)

    def kernel(self, e: ProbeEntry, tau: float, x, xi_norm: float = 1.0):
        return math.sqrt(xi_norm) * tau * self.u(e, tau, x)

    def amplitude(self, e: ProbeEntry, tau: float, x):
        """|u_tau| exp(tau Im Phi): the non-oscillatory amplitude factor."""
        phi, _ = self.phase(e, x)
        return np.abs(self.u(e, tau, x)) * np.exp(tau * np.imag(phi))


def probe_build(chart: ChartMetric, z0, xi0, zeta1=None, seed_angle: float = np.pi / 4,
                lam1: float = 0.0, lam2: float = 0.0, order: int = 1, delta: float | None = None,
                n_check: int = 4, cache: BeamCache | None = None, seed: int = 0) -> FbiProbe:
    """Anchor a probe at (z0, xi0); the neighborhood shrinks until sampled pairs are admissible."""
    z0 = np.asarray(z0, float)
    xi0 = np.asarray(xi0, float) / covector_norm(chart, z0, xi0)
    if zeta1 is None:
        zeta1 = rotate_covector(chart, z0, xi0, seed_angle)
    try:
        pf = pair_field(chart, z0, xi0, zeta1)
    except AdmissibilityError as e:
        raise ProbeError(str(e)) from e
    try:
        v = admissible_check(chart, z0, pf.zeta1, pf.zeta2)
    except TrappedGeodesic as e:
        raise ProbeError("trapped") from e
    if not v.admissible:
        raise ProbeError("anchor pair not admissible: " + ",".join(v.reasons))
    radius = pf.radius
    rng = np.random.default_rng(seed)
    for _ in range(5):
        trial = replace_radius(pf, radius)
        bad = False
        for z, xi in sample_neighborhood(trial, n_check, rng):
            w1, w2 = pair_map(trial, z, xi, check=False)
            if not admissible_check(chart, z, w1, w2).admissible:
                bad = True
                break
        if not bad:
            break
        radius *= 0.5
    else:
        radius = 0.0
    probe = FbiProbe(chart, replace_radius(pf, radius), (lam1, lam2), order, delta, radius,
                     cache if cache is not None else BeamCache())
    try:
        probe.anchor
    except TrappedGeodesic as e:
        raise ProbeError("trapped") from e
    return probe


def replace_radius(pf, radius):
    from dataclasses import replace
    return replace(pf, radius=radius)


# ---------------------------------------------------------------------------
# phase audit
# ---------------------------------------------------------------------------

def _hess_im_min(probe: FbiProbe, e: ProbeEntry, h: float = 1e-4) -> float:
    z = e.z
    f = lambda p: float(np.imag(probe.phase(e, np.asarray(p)[None])[0][0]))
    H = np.zeros((2, 2))
    E = np.eye(2) * h
    for i in range(2):
        for j in range(2):
            H[i, j] = (f(z + E[i] + E[j]) - f(z + E[i] - E[j]) - f(z - E[i] + E[j]) + f(z - E[i] - E[j])) / (4 * h * h)
    H *= float(np.exp(-2.0 * probe.chart.phi(z)[0]))
    return float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())


@dataclass
class PhaseAudit:
    diag_value: float
    grad_defect: float
    hess_min: float
    im_min: float
    homogeneity_defect: float
    passed: bool


def phase_audit(probe: FbiProbe, e: ProbeEntry | None = None, h: float = 1e-6, n_grid: int = 41,
                scale: float = 2.0) -> PhaseAudit:
    """Diagonal value, gradient, transversal Hessian, sign and homogeneity of Phi."""
    e = e or probe.anchor
    z = e.z
    val = float(abs(probe.phase(e, z[None])[0][0]))
    g = np.array([(probe.phase(e, (z + h * d)[None])[0][0] - probe.phase(e, (z - h * d)[None])[0][0]) / (2 * h)
                  for d in np.eye(2)])
    d = g - probe.t0 * e.xi
    grad_defect = float(np.hypot(covector_norm(probe.chart, z, d.real), covector_norm(probe.chart, z, d.imag)))
    w = 4.0 / math.sqrt(max(e.mu, 1e-3))
    ax = np.linspace(-w, w, n_grid)
    X = z + np.stack(np.meshgrid(ax, ax, indexing="ij"), -1) * 0.25
    X = X[probe.chart.inside(X)]
    phi, mask = probe.phase(e, X)
    im_min = float(np.min(np.imag(phi[mask]))) if mask.any() else 0.0
    phi2, _ = probe.phase(e, X, xi_scale=scale)
    homog = float(np.max(np.abs(phi2 - scale * phi))) if len(phi) else 0.0
    ok = (val <= 1e-8 and grad_defect <= 1e-6 and e.mu >= 0.1 and im_min >= -1e-9 and homog <= 1e-9)
    return PhaseAudit(val, grad_defect, e.mu, im_min, homog, bool(ok))


# ---------------------------------------------------------------------------
# transform
# ---------------------------------------------------------------------------

@dataclass
class TransformResult:
    value: complex
    noise: float         # roundoff plus discretization estimate
    abs_integral: float
    n_points: int


def _filon_weights(n: int, omega):
    """Weights W_j(omega) with int_{-1}^{1} p(x) e^{i omega x} dx = sum_j W_j p(x_j), deg p < n."""
    x, w = np.polynomial.legendre.leggauss(n)
    k = np.arange(n)
    P = np.polynomial.legendre.legvander(x, n - 1)                 # (n, n): P_k(x_j)
    om = np.atleast_1d(np.asarray(omega, float))
    mom = (2 * k + 1) * (1j ** k) * spherical_jn(k[None, :], np.abs(om)[:, None])
    mom = np.where(om[:, None] < 0, np.conj(mom), mom)
    return x, w, (mom @ P.T) * w[None, :]


def _panel_edges(edges, width, grade=()):
    """Split consecutive intervals into panels at most ``width`` wide; refine geometrically toward ``grade``."""
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-15:
            continue
        m = max(1, int(math.ceil((b - a) / width)))
        e = list(np.linspace(a, b, m + 1))
        for g in grade:
            for end, sign in ((a, 1.0), (b, -1.0)):
                if abs(g - end) < 1e-14:
                    h = min(width, b - a)
                    e += [end + sign * h * 0.15 ** j for j in range(1, 9)]
        out.append(np.unique(e))
    return np.unique(np.concatenate(out)) if out else np.empty(0)


def _rule(edges, n, kappa):
    """Filon-Gauss rule for int s(x) e^{i kappa x} dx over the panels given by ``edges``."""
    if len(edges) < 2:
        return np.empty(0), np.empty(0, complex), np.empty(0)
    lo, hi = edges[:-1], edges[1:]
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    x, w, W = _filon_weights(n, kappa * half)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wf = (half[:, None] * np.exp(1j * kappa * mid)[:, None] * W).ravel()
    wr = (half[:, None] * w[None, :]).ravel()
    return nodes, wf, wr


def _phase_profile(probe: FbiProbe, e: ProbeEntry, n_ang: int = 64, n_rad: int = 80, h: float = 1e-6):
    """Radial bounds around z: min Im Phi outside radius r, max |grad Re Phi - t0 xi| inside r."""
    if e._profile is not None:
        return e._profile
    chart = probe.chart
    r = np.linspace(0.0, 2.0 * chart.radius, n_rad + 1)[1:]
    a = np.linspace(0.0, 2 * np.pi, n_ang, endpoint=False)
    X = e.z + r[:, None, None] * np.stack([np.cos(a), np.sin(a)], -1)[None]
    inside = chart.inside(X)
    Xi = X[inside]
    phi, ok = probe.phase(e, Xi)
    im = np.full(X.shape[:2], np.inf)
    im[inside] = np.where(ok, np.imag(phi), np.inf)
    gr = np.zeros((len(Xi), 2))
    for k, d in enumerate(np.eye(2)):
        pp, okp = probe.phase(e, Xi + h * d)
        pm, okm = probe.phase(e, Xi - h * d)
        gr[:, k] = np.where(okp & okm, (pp.real - pm.real) / (2 * h) - probe.t0 * e.xi[k], 0.0)
    g = np.zeros(X.shape[:2])
    g[inside] = np.linalg.norm(gr, axis=1)
    im_out = np.minimum.accumulate(im.min(1)[::-1])[::-1]
    g_in = np.maximum.accumulate(g.max(1))
    e._profile = (r, im_out, g_in)
    return e._profile


def _quadrature_points(probe: FbiProbe, e: ProbeEntry, f, tau: float, per_period: float,
                       per_sigma: float, n: int = 12):
    """Nodes and weights for int_M F dx with F = f k_tau dV_g.

    The linear phase tau t0 xi.(x - z) is integrated exactly (Filon); the
    remainder is resolved on the Gaussian scale and on its residual
    oscillation. Frame: along/across the jump line if f has one, else
    across/along xi.
    """
    chart = probe.chart
    z = e.z
    scale = float(np.exp(chart.phi(z)[0]))
    r, im_out, g_in = _phase_profile(probe, e)
    far = np.nonzero(tau * im_out >= 41.0)[0]          # envelope below e^-41 past L
    L = max(float(r[far[0]]) if far.size else float(r[-1]), 1e-3)
    sigma = 1.0 / math.sqrt(tau * e.mu) / scale
    k_res = 1.2 * tau * float(np.interp(L, r, g_in))
    width = sigma * 4.0 / per_sigma
    if k_res > 0:
        width = min(width, n / per_period * 2.0 * math.pi / k_res)
    kvec = tau * probe.t0 * e.xi
    lines = getattr(f, "lines", ())
    points = getattr(f, "points", ())
    if lines:
        eb = np.asarray(lines[0][1], float)
        eb = eb / np.linalg.norm(eb)
    else:
        eb = e.xi / np.linalg.norm(e.xi)
    ea = np.array([eb[1], -eb[0]])
    ka, kb = float(kvec @ ea), float(kvec @ eb)
    za = float(z @ ea)
    R = chart.radius
    acuts = [max(-L, -R - za), min(L, R - za)]
    agrade = []
    for p, nn in lines:
        if abs(np.dot(ea, nn)) > 1e-12 and abs(np.dot(eb, nn)) < 1e-12:
            acuts.append(float(np.dot(p - z, nn) / np.dot(ea, nn)))
    for p in points:
        agrade.append(float(np.dot(p - z, ea)))
    acuts = np.unique(np.clip(acuts + agrade, acuts[0], acuts[1]))
    aq, awf, awr = _rule(_panel_edges(acuts, width, agrade), n, ka)
    X, WF, WR = [], [], []
    for a, wfa, wra in zip(aq, awf, awr):
        base = z + a * ea
        bb = float(base @ eb)
        cc = float(base @ base) - R * R
        disc = bb * bb - cc
        if disc <= 0:
            continue
        lo, hi = max(-L, -bb - math.sqrt(disc)), min(L, -bb + math.sqrt(disc))
        if hi <= lo:
            continue
        cuts = [lo, hi]
        bgrade = []
        for p, nn in lines:
            d = float(eb @ nn)
            if abs(d) >= 1e-12:
                cuts.append(float((p - base) @ nn / d))
        for p in points:
            bgrade.append(float((p - base) @ eb))
        cuts = np.unique(np.clip(cuts + bgrade, lo, hi))
        bq, bwf, bwr = _rule(_panel_edges(cuts, width, bgrade), n, kb)
        X.append(base + bq[:, None] * eb)
        WF.append(wfa * bwf)
        WR.append(wra * bwr)
    if not X:
        return np.empty((0, 2)), np.empty(0, complex), np.empty(0)
    X = np.concatenate(X)
    WF = np.concatenate(WF)
    # Filon weights integrate s e^{i k.(x-z)}; divide the modulation back out of F
    WF = WF * np.exp(-1j * ((X - z) @ kvec))
    return X, WF, np.concatenate(WR)


def transform(probe: FbiProbe, f, tau: float, e: ProbeEntry | None = None, xi_norm: float = 1.0,
              per_period: float = 10.0, per_sigma: float = 4.0, estimate: bool = True) -> TransformResult:
    """T = int_M f k_tau dV_g, k_tau = |xi|^(1/2) tau u_tau."""
    e = e or probe.anchor

    def run(pp, ps):
        X, WF, WR = _quadrature_points(probe, e, f, tau, pp, ps)
        if len(X) == 0:
            return 0j, 0.0, 0
        F = f(X) * probe.kernel(e, tau, X, xi_norm) * probe.chart.conformal_factor(X) ** 2
        return complex(np.sum(F * WF)), float(np.sum(np.abs(F) * WR)), len(X)

    val, absint, npts = run(per_period, per_sigma)
    noise = 64.0 * np.finfo(float).eps * absint
    if estimate:
        coarse, _, _ = run(0.7 * per_period, 0.7 * per_sigma)
        noise = max(noise, 4.0 * abs(val - coarse))
    return TransformResult(val, float(noise), absint, npts)


# ---------------------------------------------------------------------------
# decay classification
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    slope: float
    r2: float
    classification: str
    flag: str = ""


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    # flat data: ss is pure rounding, any fit is exact
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 1e-24 * float(np.sum(y * y)) else 1.0
    return float(coef[0]), r2


def decay_fit(taus, values, noise=None, s_smooth: float = S_SMOOTH, s_sing: float = S_SING) -> DecayFit:
    """Log-log slope of |T| over the upper half of the tau grid, with the floor rule."""
    taus = np.asarray(taus, float)
    vals = np.abs(np.asarray(values, complex))
    if len(taus) < 5:
        raise ValueError("at least 5 samples are needed")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("tau grid must be increasing")
    done = np.isfinite(vals)
    top = np.max(vals[done]) if done.any() else 0.0
    floor = np.full(len(vals), REL_FLOOR * top if top > 0 else np.inf)
    if noise is not None:
        floor = np.maximum(floor, np.nan_to_num(np.asarray(noise, float), nan=np.inf))
    upper = np.arange(len(taus)) >= (len(taus) - 1) // 2
    above = done & (vals > floor)
    if not np.all(above[upper]):
        use = above
        if use.sum() >= 2:
            slope, r2 = _linfit(np.log(taus[use]), np.log(vals[use]))
        else:
            slope, r2 = -math.inf, float("nan")
        return DecayFit(slope, r2, SMOOTH, "underflow")
    slope, r2 = _linfit(np.log(taus[upper]), np.log(vals[upper]))
    if slope <= -s_smooth:
        cls = SMOOTH
    elif slope >= -s_sing:
        cls = SINGULAR
    else:
        cls = INCONCLUSIVE
    return DecayFit(slope, r2, cls)


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------

@dataclass
class ProbeParams:
    seed_angle: float = np.pi / 4
    lam1: float = 0.0
    lam2: float = 0.0
    order: int = 1
    delta: float | None = None
    taus: tuple = TAU_GRID
    s_smooth: float = S_SMOOTH
    s_sing: float = S_SING


@dataclass
class DirectionRecord:
    index: int
    z: np.ndarray
    xi: np.ndarray
    taus: tuple
    abs_t: list
    noise: list
    slope: float
    r2: float
    classification: str
    reason: str = ""


@dataclass
class DecayReport:
    records: list
    params: ProbeParams

    def classes(self):
        return [r.classification for r in self.records]


def scan_direction(chart, f, index, z, xi, params: ProbeParams, cache: BeamCache | None = None):
    z = np.asarray(z, float)
    xi = np.asarray(xi, float)
    try:
        probe = probe_build(chart, z, xi, seed_angle=params.seed_angle, lam1=params.lam1,
                            lam2=params.lam2, order=params.order, delta=params.delta, cache=cache)
    except (ProbeError, OutOfNeighborhood, TrappedGeodesic, ValueError) as err:
        return DirectionRecord(index, z, xi, tuple(params.taus), [], [], float("nan"), float("nan"),
                               UNTESTABLE, str(err) or type(err).__name__)
    taus = tuple(params.taus)
    first_upper = (len(taus) - 1) // 2
    vals, noise = [], []
    for i, tau in enumerate(taus):
        r = transform(probe, f, tau)
        vals.append(abs(r.value))
        noise.append(r.noise)
        # an upper-half sample under the floor settles the class; later samples sit lower still
        if i >= first_upper and vals[-1] <= max(REL_FLOOR * max(vals), noise[-1]):
            break
    n = len(vals)
    vals += [float("nan")] * (len(taus) - n)
    noise += [float("nan")] * (len(taus) - n)
    fit = decay_fit(taus, vals, noise, params.s_smooth, params.s_sing)
    return DirectionRecord(index, z, xi, taus, vals, noise, fit.slope, fit.r2,
                           fit.classification, fit.flag)


def wf_scan(chart: ChartMetric, f, directions, params: ProbeParams | None = None,
            threads: int = 1) -> DecayReport:
    """Classify each (z, xi_hat) by the decay of the transform over the tau grid."""
    params = params or ProbeParams()
    cache = BeamCache()
    jobs = list(enumerate(directions))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            recs = list(ex.map(lambda j: scan_direction(chart, f, j[0], j[1][0], j[1][1], params, cache), jobs))
    else:
        recs = [scan_direction(chart, f, i, z, xi, params, cache) for i, (z, xi) in jobs]
    recs.sort(key=lambda r: r.index)
    return DecayReport(recs, params)


def direction_fan(chart: ChartMetric, z, n: int = 16, offset: float = 0.0):
    """n unit covectors at z, evenly spaced in angle."""
    z = np.asarray(z, float)
    return [(z, np.array([math.cos(offset + 2 * math.pi * k / n), math.sin(offset + 2 * math.pi * k / n)])
             * float(np.exp(chart.phi(z)[0]))) for k in range(n)]
