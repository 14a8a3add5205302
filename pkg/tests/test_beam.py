import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbfbi.beam import (ShrinkDelta, UnsupportedOrder, axis_data, cutoff, fermi_chart, gaussian_beam,
                        residual_levels, riccati_solve, transport_amplitudes)
from gbfbi.geodesic import shoot
from gbfbi.manifold import unit_covector
from gbfbi.pairing import coframe


def test_riccati_free_closed_form():
    r = riccati_solve(0.0, -3.0, 3.0)
    t = np.linspace(-3, 3, 301)
    assert np.max(np.abs(r.H_at(t) - (t + 1j) / (1 + t * t))) < 1e-10
    assert r.residual() < 1e-7


@pytest.mark.parametrize("H0", [1j, 0.5 + 1j, -0.3 + 0.2j])
def test_riccati_constant_curvature_closed_forms(H0):
    t = np.linspace(-2.5, 2.5, 201)
    r = riccati_solve(-1.0, -2.5, 2.5, H0=H0)          # Y'' = -Y
    ref = (-np.sin(t) + H0 * np.cos(t)) / (np.cos(t) + H0 * np.sin(t))
    assert np.max(np.abs(r.H_at(t) - ref)) < 1e-9
    r = riccati_solve(1.0, -2.5, 2.5, H0=H0)           # Y'' = Y
    ref = (np.sinh(t) + H0 * np.cosh(t)) / (np.cosh(t) + H0 * np.sinh(t))
    assert np.max(np.abs(r.H_at(t) - ref)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(f=st.floats(-4, 4), a=st.floats(-2, 2), b=st.floats(0.05, 3))
def test_riccati_keeps_positive_imaginary_part(f, a, b):
    r = riccati_solve(f, -2.0, 2.0, H0=complex(a, b))
    assert np.all(r.H.imag > 0)


def test_riccati_rejects_bad_initial_value():
    with pytest.raises(ValueError):
        riccati_solve(0.0, -1, 1, H0=1.0)


def test_cutoff_shape():
    r = np.linspace(-1.2, 1.2, 2001)
    chi, d1, d2 = cutoff(r, 0.6)
    assert np.all(chi[np.abs(r) <= 0.6] == 1.0) and np.all(chi[np.abs(r) >= 1] == 0.0)
    assert np.all((chi >= 0) & (chi <= 1))
    h = r[1] - r[0]
    assert np.max(np.abs(np.gradient(chi, h) - d1)) < 1e-3 * np.abs(d1).max()
    assert np.max(np.abs(np.gradient(d1, h) - d2)) < 1e-3 * np.abs(d2).max()


def test_fermi_chart_euclidean_default_width(euclid):
    z, xi = np.zeros(2), np.array([1.0, 0.0])
    p = shoot(euclid, z, xi, extend=0.5)
    fc = fermi_chart(p, coframe(euclid, z, xi))
    assert abs(fc.delta - 2.0) < 1e-12
    X, J = fc.forward(np.array([0.3]), np.array([0.2]))
    assert np.allclose(np.abs(X[0]), [0.3, 0.2], atol=1e-13)


def test_fermi_chart_bump(bump):
    z = np.zeros(2)
    xi = unit_covector(bump, z, 0.0)
    p = shoot(bump, z, xi, extend=0.5)
    fc = fermi_chart(p, coframe(bump, z, xi))
    assert 0.3 < fc.delta < 1.0
    assert fc.roundtrip_error() < 1e-9
    g0, dg = fc.axis_jet_defect()
    assert g0 < 1e-9 and dg < 1e-6
    t = np.linspace(-0.8, 0.8, 9)
    y = np.linspace(-0.9, 0.9, 9) * fc.delta
    T, Y = np.meshgrid(t, y)
    g = fc.pullback_metric(T, Y)
    A, _, _ = fc.A(T, Y)
    assert np.max(np.abs(g[..., 0, 1])) < 1e-9 and np.max(np.abs(g[..., 1, 1] - 1)) < 1e-9
    assert np.max(np.abs(g[..., 0, 0] - A * A)) < 1e-9
    with pytest.raises(ShrinkDelta):
        fermi_chart(p, coframe(bump, z, xi), delta=3.0)


def test_amplitude_levels_cancel(bump):
    z = np.zeros(2)
    xi = unit_covector(bump, z, 0.0)
    p = shoot(bump, z, xi, extend=0.5)
    ad = axis_data(p, 1.0, -p.t_in - 0.5, p.t_out + 0.5)
    b0 = transport_amplitudes(ad, 0)
    b1 = transport_amplitudes(ad, 1)
    lv0 = residual_levels(ad, b0, -2.0)
    lv1 = residual_levels(ad, b1, -2.0)
    scale = max(lv0.values())
    # order 0 clears weights >= 1, order 1 clears weights >= -1
    assert max(v for w, v in lv0.items() if w >= 1.0) < 1e-8 * scale
    assert lv0[0.5] > 1e-3 * scale
    assert max(v for w, v in lv1.items() if w >= -1.0) < 1e-8 * scale
    with pytest.raises(UnsupportedOrder):
        transport_amplitudes(ad, 2)


@pytest.mark.parametrize("order", [0, 1])
def test_beam_fields_consistent(bump, order):
    z = np.array([0.05, -0.1])
    beam = gaussian_beam(bump, z, unit_covector(bump, z, 0.4), order=order)
    assert np.all(beam.axis.H.imag > 0)
    s = 60.0
    t = np.linspace(-0.5, 0.5, 5)
    y = np.full(5, 0.08)
    f = beam.fields(s, t, y)
    assert np.max(np.abs(f["eikonal"])) < 5e-2
    # chart laplacian by finite differences of v at the mapped points
    X, _ = beam.fermi.forward(t, y)
    h = 1e-4

    def v_at(P):
        tt, yy, ok = beam.locate(P)
        assert ok.all()
        return beam.fields(s, tt, yy, derivs=0)["v"]
    lap = sum(v_at(X + h * e) + v_at(X - h * e) for e in np.eye(2)) - 4 * v_at(X)
    lap = lap / h ** 2 * np.exp(-2 * bump.phi(X)[0])
    assert np.allclose(lap, f["lap"], rtol=1e-4, atol=1e-3 * np.abs(f["lap"]).max())


def test_unit_covector_required(euclid):
    with pytest.raises(ValueError):
        gaussian_beam(euclid, np.zeros(2), np.array([2.0, 0.0]))
