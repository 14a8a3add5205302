"""Hot numeric kernels.

Every kernel exists twice: a loop form (compiled with numba when enabled)
and a vectorized numpy form. The public names at the bottom of the module
dispatch to one or the other according to ``_accel.USE_NUMBA``.

Metric families are all conformally flat, ``g = exp(2*phi) * I``, and are
encoded by an integer code plus a length-4 parameter vector:

    0  euclidean         phi = 0
    1  constant K        phi = -log(1 + K |x|^2 / 4)       p = (K, 0, 0, 0)
    2  conformal bump    phi = a exp(-|x - c|^2 / w^2)      p = (a, c1, c2, w)
"""
import math

import numpy as np

from ._accel import USE_NUMBA, optional_njit

EUCLIDEAN, CONSTANT_CURVATURE, CONFORMAL_BUMP = 0, 1, 2


def _phi_jet(code, p, x1, x2):
    # returns phi, phi_1, phi_2, phi_11, phi_12, phi_22, phi_111, phi_112, phi_122, phi_222
    z = 0.0 * x1
    if code == 1:
        K = p[0]
        q = 1.0 + 0.25 * K * (x1 * x1 + x2 * x2)
        iq = 1.0 / q
        iq2 = iq * iq
        iq3 = iq2 * iq
        h = 0.5 * K
        k2 = 0.25 * K * K
        k3 = 0.25 * K * K * K
        return (-np.log(q),
                -h * x1 * iq, -h * x2 * iq,
                -h * iq + k2 * x1 * x1 * iq2, k2 * x1 * x2 * iq2, -h * iq + k2 * x2 * x2 * iq2,
                k2 * 3.0 * x1 * iq2 - k3 * x1 * x1 * x1 * iq3,
                k2 * x2 * iq2 - k3 * x1 * x1 * x2 * iq3,
                k2 * x1 * iq2 - k3 * x1 * x2 * x2 * iq3,
                k2 * 3.0 * x2 * iq2 - k3 * x2 * x2 * x2 * iq3)
    if code == 2:
        a = p[0]
        s = 1.0 / (p[3] * p[3])
        d1 = x1 - p[1]
        d2 = x2 - p[2]
        E = a * np.exp(-s * (d1 * d1 + d2 * d2))
        s2 = s * s
        s3 = s2 * s
        return (E,
                -2.0 * s * d1 * E, -2.0 * s * d2 * E,
                E * (4.0 * s2 * d1 * d1 - 2.0 * s), E * (4.0 * s2 * d1 * d2), E * (4.0 * s2 * d2 * d2 - 2.0 * s),
                E * (-8.0 * s3 * d1 * d1 * d1 + 12.0 * s2 * d1),
                E * (-8.0 * s3 * d1 * d1 * d2 + 4.0 * s2 * d2),
                E * (-8.0 * s3 * d1 * d2 * d2 + 4.0 * s2 * d1),
                E * (-8.0 * s3 * d2 * d2 * d2 + 12.0 * s2 * d2))
    return (z, z, z, z, z, z, z, z, z, z)


phi_jet = _phi_jet
_phi_jet_nb = optional_njit(cache=True)(_phi_jet)


# ---------------------------------------------------------------------------
# normal-ray integration: geodesic + scalar Jacobi field A'' = -K A
# ---------------------------------------------------------------------------

def _ray_rhs_loop(code, p, s, out):
    j = _phi_jet_nb(code, p, s[0], s[1])
    f1, f2 = j[1], j[2]
    lap = j[3] + j[5]
    K = -math.exp(-2.0 * j[0]) * lap
    pd = f1 * s[2] + f2 * s[3]
    vv = s[2] * s[2] + s[3] * s[3]
    out[0] = s[2]
    out[1] = s[3]
    out[2] = -2.0 * pd * s[2] + vv * f1
    out[3] = -2.0 * pd * s[3] + vv * f2
    out[4] = s[5]
    out[5] = -K * s[4]


_ray_rhs_nb = optional_njit(cache=True)(_ray_rhs_loop)


def _rays_rk4_loop(code, p, x0, v0, stops, nsub):
    n = x0.shape[0]
    m = stops.shape[0]
    out = np.empty((n, m, 6))
    s = np.empty(6)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    for r in range(n):
        s[0] = x0[r, 0]
        s[1] = x0[r, 1]
        s[2] = v0[r, 0]
        s[3] = v0[r, 1]
        s[4] = 1.0
        s[5] = 0.0
        y = 0.0
        for q in range(m):
            h = (stops[q] - y) / nsub
            for _ in range(nsub):
                _ray_rhs_nb(code, p, s, k1)
                for i in range(6):
                    tmp[i] = s[i] + 0.5 * h * k1[i]
                _ray_rhs_nb(code, p, tmp, k2)
                for i in range(6):
                    tmp[i] = s[i] + 0.5 * h * k2[i]
                _ray_rhs_nb(code, p, tmp, k3)
                for i in range(6):
                    tmp[i] = s[i] + h * k3[i]
                _ray_rhs_nb(code, p, tmp, k4)
                for i in range(6):
                    s[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
            y = stops[q]
            for i in range(6):
                out[r, q, i] = s[i]
    return out


def _ray_rhs_np(code, p, S):
    j = _phi_jet(code, p, S[:, 0], S[:, 1])
    f1, f2 = j[1], j[2]
    K = -np.exp(-2.0 * j[0]) * (j[3] + j[5])
    pd = f1 * S[:, 2] + f2 * S[:, 3]
    vv = S[:, 2] ** 2 + S[:, 3] ** 2
    return np.stack([S[:, 2], S[:, 3],
                     -2.0 * pd * S[:, 2] + vv * f1,
                     -2.0 * pd * S[:, 3] + vv * f2,
                     S[:, 5], -K * S[:, 4]], axis=1)


def _rays_rk4_np(code, p, x0, v0, stops, nsub):
    n = x0.shape[0]
    S = np.zeros((n, 6))
    S[:, 0:2] = x0
    S[:, 2:4] = v0
    S[:, 4] = 1.0
    out = np.empty((n, stops.shape[0], 6))
    y = 0.0
    for q, stop in enumerate(stops):
        h = (stop - y) / nsub
        for _ in range(nsub):
            k1 = _ray_rhs_np(code, p, S)
            k2 = _ray_rhs_np(code, p, S + 0.5 * h * k1)
            k3 = _ray_rhs_np(code, p, S + 0.5 * h * k2)
            k4 = _ray_rhs_np(code, p, S + h * k3)
            S = S + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        y = stop
        out[:, q, :] = S
    return out


# ---------------------------------------------------------------------------
# geodesic flow to time 1 with variational equations and covector transport
#   state: x(2) v(2) dx/dv0 (2x2) dv/dv0 (2x2) transported covector rows (2x2)
# ---------------------------------------------------------------------------

def _flow_rhs_loop(code, p, s, out):
    j = _phi_jet_nb(code, p, s[0], s[1])
    f1, f2 = j[1], j[2]
    h11, h12, h22 = j[3], j[4], j[5]
    v1, v2 = s[2], s[3]
    pd = f1 * v1 + f2 * v2
    vv = v1 * v1 + v2 * v2
    out[0] = v1
    out[1] = v2
    out[2] = -2.0 * pd * v1 + vv * f1
    out[3] = -2.0 * pd * v2 + vv * f2
    hv1 = h11 * v1 + h12 * v2
    hv2 = h12 * v1 + h22 * v2
    ax11 = -2.0 * hv1 * v1 + vv * h11
    ax12 = -2.0 * hv2 * v1 + vv * h12
    ax21 = -2.0 * hv1 * v2 + vv * h12
    ax22 = -2.0 * hv2 * v2 + vv * h22
    av11 = -2.0 * f1 * v1 - 2.0 * pd + 2.0 * v1 * f1
    av12 = -2.0 * f2 * v1 + 2.0 * v2 * f1
    av21 = -2.0 * f1 * v2 + 2.0 * v1 * f2
    av22 = -2.0 * f2 * v2 - 2.0 * pd + 2.0 * v2 * f2
    for m in range(2):
        jx1 = s[4 + m]
        jx2 = s[6 + m]
        jv1 = s[8 + m]
        jv2 = s[10 + m]
        out[4 + m] = jv1
        out[6 + m] = jv2
        out[8 + m] = ax11 * jx1 + ax12 * jx2 + av11 * jv1 + av12 * jv2
        out[10 + m] = ax21 * jx1 + ax22 * jx2 + av21 * jv1 + av22 * jv2
    for r in range(2):
        c1 = s[12 + 2 * r]
        c2 = s[13 + 2 * r]
        vc = v1 * c1 + v2 * c2
        fc = f1 * c1 + f2 * c2
        out[12 + 2 * r] = vc * f1 + pd * c1 - v1 * fc
        out[13 + 2 * r] = vc * f2 + pd * c2 - v2 * fc


_flow_rhs_nb = optional_njit(cache=True)(_flow_rhs_loop)


def _flow_rk4_loop(code, p, z0, V0, nsteps):
    n = V0.shape[0]
    out = np.empty((n, 16))
    s = np.empty(16)
    k1 = np.empty(16)
    k2 = np.empty(16)
    k3 = np.empty(16)
    k4 = np.empty(16)
    tmp = np.empty(16)
    h = 1.0 / nsteps
    for r in range(n):
        for i in range(16):
            s[i] = 0.0
        s[0] = z0[0]
        s[1] = z0[1]
        s[2] = V0[r, 0]
        s[3] = V0[r, 1]
        s[8] = 1.0
        s[11] = 1.0
        s[12] = 1.0
        s[15] = 1.0
        for _ in range(nsteps):
            _flow_rhs_nb(code, p, s, k1)
            for i in range(16):
                tmp[i] = s[i] + 0.5 * h * k1[i]
            _flow_rhs_nb(code, p, tmp, k2)
            for i in range(16):
                tmp[i] = s[i] + 0.5 * h * k2[i]
            _flow_rhs_nb(code, p, tmp, k3)
            for i in range(16):
                tmp[i] = s[i] + h * k3[i]
            _flow_rhs_nb(code, p, tmp, k4)
            for i in range(16):
                s[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
        for i in range(16):
            out[r, i] = s[i]
    return out


def _flow_rhs_np(code, p, S):
    j = _phi_jet(code, p, S[:, 0], S[:, 1])
    f1, f2 = j[1], j[2]
    h11, h12, h22 = j[3], j[4], j[5]
    v1, v2 = S[:, 2], S[:, 3]
    pd = f1 * v1 + f2 * v2
    vv = v1 * v1 + v2 * v2
    out = np.empty_like(S)
    out[:, 0] = v1
    out[:, 1] = v2
    out[:, 2] = -2.0 * pd * v1 + vv * f1
    out[:, 3] = -2.0 * pd * v2 + vv * f2
    hv1 = h11 * v1 + h12 * v2
    hv2 = h12 * v1 + h22 * v2
    Ax = np.stack([np.stack([-2.0 * hv1 * v1 + vv * h11, -2.0 * hv2 * v1 + vv * h12], -1),
                   np.stack([-2.0 * hv1 * v2 + vv * h12, -2.0 * hv2 * v2 + vv * h22], -1)], -2)
    Av = np.stack([np.stack([-2.0 * pd, -2.0 * f2 * v1 + 2.0 * v2 * f1], -1),
                   np.stack([-2.0 * f1 * v2 + 2.0 * v1 * f2, -2.0 * pd], -1)], -2)
    Jx = S[:, 4:8].reshape(-1, 2, 2)
    Jv = S[:, 8:12].reshape(-1, 2, 2)
    out[:, 4:8] = Jv.reshape(-1, 4)
    out[:, 8:12] = (Ax @ Jx + Av @ Jv).reshape(-1, 4)
    C = S[:, 12:16].reshape(-1, 2, 2)
    vel = S[:, None, 2:4]
    grad = np.stack([f1, f2], -1)[:, None, :]
    vc = np.sum(C * vel, -1, keepdims=True)
    fc = np.sum(C * grad, -1, keepdims=True)
    out[:, 12:16] = (vc * grad + pd[:, None, None] * C - vel * fc).reshape(-1, 4)
    return out


def _flow_rk4_np(code, p, z0, V0, nsteps):
    n = V0.shape[0]
    S = np.zeros((n, 16))
    S[:, 0:2] = z0
    S[:, 2:4] = V0
    S[:, [8, 11, 12, 15]] = 1.0
    h = 1.0 / nsteps
    for _ in range(nsteps):
        k1 = _flow_rhs_np(code, p, S)
        k2 = _flow_rhs_np(code, p, S + 0.5 * h * k1)
        k3 = _flow_rhs_np(code, p, S + 0.5 * h * k2)
        k4 = _flow_rhs_np(code, p, S + h * k3)
        S = S + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return S


# ---------------------------------------------------------------------------
# tensor Chebyshev evaluation with first partials, u, v in [-1, 1]
# ---------------------------------------------------------------------------

def _cheb2d_loop(C, u, v):
    nt, ny = C.shape
    P = u.shape[0]
    val = np.empty(P, dtype=C.dtype)
    du = np.empty(P, dtype=C.dtype)
    dv = np.empty(P, dtype=C.dtype)
    Tu = np.empty(nt)
    dTu = np.empty(nt)
    Tv = np.empty(ny)
    dTv = np.empty(ny)
    for k in range(P):
        _cheb_basis(u[k], Tu, dTu)
        _cheb_basis(v[k], Tv, dTv)
        a = C[0, 0] * 0.0
        b = a
        c = a
        for i in range(nt):
            ri = a * 0.0
            rdi = ri
            for j in range(ny):
                ri += C[i, j] * Tv[j]
                rdi += C[i, j] * dTv[j]
            a += Tu[i] * ri
            b += dTu[i] * ri
            c += Tu[i] * rdi
        val[k] = a
        du[k] = b
        dv[k] = c
    return val, du, dv


def _cheb_basis_loop(x, T, dT):
    n = T.shape[0]
    T[0] = 1.0
    dT[0] = 0.0
    if n > 1:
        T[1] = x
        dT[1] = 1.0
    for i in range(2, n):
        T[i] = 2.0 * x * T[i - 1] - T[i - 2]
        dT[i] = 2.0 * T[i - 1] + 2.0 * x * dT[i - 1] - dT[i - 2]


_cheb_basis = optional_njit(cache=True)(_cheb_basis_loop)


def _cheb_basis_np(x, n):
    T = np.empty((x.size, n))
    dT = np.empty((x.size, n))
    T[:, 0] = 1.0
    dT[:, 0] = 0.0
    if n > 1:
        T[:, 1] = x
        dT[:, 1] = 1.0
    for i in range(2, n):
        T[:, i] = 2.0 * x * T[:, i - 1] - T[:, i - 2]
        dT[:, i] = 2.0 * T[:, i - 1] + 2.0 * x * dT[:, i - 1] - dT[:, i - 2]
    return T, dT


def _cheb2d_np(C, u, v):
    Tu, dTu = _cheb_basis_np(u, C.shape[0])
    Tv, dTv = _cheb_basis_np(v, C.shape[1])
    R = Tv @ C.T
    Rd = dTv @ C.T
    return (np.einsum("pi,pi->p", Tu, R), np.einsum("pi,pi->p", dTu, R),
            np.einsum("pi,pi->p", Tu, Rd))


# ---------------------------------------------------------------------------
# polyline segment proximity
# ---------------------------------------------------------------------------

def _pt_seg_loop(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    L2 = dx * dx + dy * dy
    t = 0.0
    if L2 > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / L2
        t = min(1.0, max(0.0, t))
    ex = ax + t * dx - px
    ey = ay + t * dy - py
    return math.sqrt(ex * ex + ey * ey)


_pt_seg = optional_njit(cache=True)(_pt_seg_loop)


def _seg_seg_loop(a0, a1, b0, b1, c0, c1, d0, d1):
    # segments AB and CD
    r0 = b0 - a0
    r1 = b1 - a1
    s0 = d0 - c0
    s1 = d1 - c1
    den = r0 * s1 - r1 * s0
    if den != 0.0:
        t = ((c0 - a0) * s1 - (c1 - a1) * s0) / den
        u = ((c0 - a0) * r1 - (c1 - a1) * r0) / den
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return 0.0
    return min(min(_pt_seg(a0, a1, c0, c1, d0, d1), _pt_seg(b0, b1, c0, c1, d0, d1)),
               min(_pt_seg(c0, c1, a0, a1, b0, b1), _pt_seg(d0, d1, a0, a1, b0, b1)))


_seg_seg = optional_njit(cache=True)(_seg_seg_loop)


def _close_pairs_loop(P, Q, thresh, same, gap):
    n = P.shape[0] - 1
    m = Q.shape[0] - 1
    cap = 1024
    ii = np.empty(cap, dtype=np.int64)
    jj = np.empty(cap, dtype=np.int64)
    dd = np.empty(cap)
    cnt = 0
    for i in range(n):
        j0 = i + gap if same else 0
        for j in range(j0, m):
            d = _seg_seg(P[i, 0], P[i, 1], P[i + 1, 0], P[i + 1, 1],
                         Q[j, 0], Q[j, 1], Q[j + 1, 0], Q[j + 1, 1])
            if d < thresh:
                if cnt == cap:
                    cap *= 2
                    ii2 = np.empty(cap, dtype=np.int64)
                    jj2 = np.empty(cap, dtype=np.int64)
                    dd2 = np.empty(cap)
                    ii2[:cnt] = ii[:cnt]
                    jj2[:cnt] = jj[:cnt]
                    dd2[:cnt] = dd[:cnt]
                    ii, jj, dd = ii2, jj2, dd2
                ii[cnt] = i
                jj[cnt] = j
                dd[cnt] = d
                cnt += 1
    return ii[:cnt], jj[:cnt], dd[:cnt]


def _pt_seg_np(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    L2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(L2 > 0, ((px - ax) * dx + (py - ay) * dy) / np.where(L2 > 0, L2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(ax + t * dx - px, ay + t * dy - py)


def _close_pairs_np(P, Q, thresh, same, gap):
    A, B = P[:-1], P[1:]
    C, D = Q[:-1], Q[1:]
    a0, a1, b0, b1 = A[:, None, 0], A[:, None, 1], B[:, None, 0], B[:, None, 1]
    c0, c1, d0, d1 = C[None, :, 0], C[None, :, 1], D[None, :, 0], D[None, :, 1]
    r0, r1, s0, s1 = b0 - a0, b1 - a1, d0 - c0, d1 - c1
    den = r0 * s1 - r1 * s0
    safe = np.where(den != 0, den, 1.0)
    t = ((c0 - a0) * s1 - (c1 - a1) * s0) / safe
    u = ((c0 - a0) * r1 - (c1 - a1) * r0) / safe
    hit = (den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    d = np.minimum(np.minimum(_pt_seg_np(a0, a1, c0, c1, d0, d1), _pt_seg_np(b0, b1, c0, c1, d0, d1)),
                   np.minimum(_pt_seg_np(c0, c1, a0, a1, b0, b1), _pt_seg_np(d0, d1, a0, a1, b0, b1)))
    d = np.where(hit, 0.0, d)
    mask = d < thresh
    if same:
        i_idx, j_idx = np.indices(d.shape)
        mask &= j_idx >= i_idx + gap
    ii, jj = np.nonzero(mask)
    return ii.astype(np.int64), jj.astype(np.int64), d[ii, jj]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

rays_rk4_numpy = _rays_rk4_np
cheb2d_numpy = _cheb2d_np
close_pairs_numpy = _close_pairs_np
flow_rk4_numpy = _flow_rk4_np

if USE_NUMBA:
    rays_rk4 = optional_njit(cache=True)(_rays_rk4_loop)
    _cheb2d_jit = optional_njit(cache=True)(_cheb2d_loop)
    close_pairs = optional_njit(cache=True)(_close_pairs_loop)
    flow_rk4 = optional_njit(cache=True)(_flow_rk4_loop)

    def cheb2d(C, u, v):
        C = np.ascontiguousarray(C)
        return _cheb2d_jit(C, np.ascontiguousarray(u, dtype=np.float64),
                           np.ascontiguousarray(v, dtype=np.float64))
else:
    rays_rk4 = _rays_rk4_np
    cheb2d = _cheb2d_np
    close_pairs = _close_pairs_np
    flow_rk4 = _flow_rk4_np

ACCELERATED = USE_NUMBA
