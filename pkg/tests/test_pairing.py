import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbfbi.geodesic import shoot
from gbfbi.manifold import ChartMetric, cometric_inner, covector_norm, rotate_covector, unit_covector
from gbfbi.pairing import (AdmissibilityError, OutOfNeighborhood, admissible_check, coframe, exp_flow,
                           frame_map, log_map, pair_field, pair_map, pair_map_pt, parallel_transport,
                           reflect_cov, sample_neighborhood, transport_matrix)


def _field(chart, angle=np.pi / 4):
    z0 = np.zeros(2)
    xi0 = unit_covector(chart, z0, 0.0)
    return pair_field(chart, z0, xi0, rotate_covector(chart, z0, xi0, angle))


def test_reflect_identity(euclid):
    z = np.zeros(2)
    z2, t0 = reflect_cov(euclid, z, np.array([np.cos(0.3), np.sin(0.3)]), np.array([1.0, 0.0]))
    assert abs(t0 - 2 * np.cos(0.3)) < 1e-15
    assert np.allclose(z2, [np.cos(0.3), -np.sin(0.3)])
    with pytest.raises(AdmissibilityError):
        reflect_cov(euclid, z, np.array([0.0, 1.0]), np.array([1.0, 0.0]))


def test_neighborhood_radius(euclid, bump):
    assert abs(_field(euclid).radius - 0.5) < 0.02
    assert 0.3 < _field(bump).radius < 0.7


@pytest.mark.parametrize("name", ["euclid", "bump"])
def test_pair_identity_and_backends(name, request):
    chart = request.getfixturevalue(name)
    pf = _field(chart)
    rng = np.random.default_rng(7)
    for z, xi in sample_neighborhood(pf, 40, rng):
        w1, w2 = pair_map(pf, z, xi)
        u = xi / covector_norm(chart, z, xi)
        assert covector_norm(chart, z, w1 + w2 - pf.t0 * u) < 1e-12
        assert abs(covector_norm(chart, z, w1) - 1) < 1e-12 and abs(covector_norm(chart, z, w2) - 1) < 1e-12
        v1, v2 = pair_map_pt(pf, z, xi)
        assert np.allclose(w1, v1, atol=1e-9) and np.allclose(w2, v2, atol=1e-9)


def test_out_of_neighborhood(euclid):
    pf = _field(euclid)
    with pytest.raises(OutOfNeighborhood):
        pair_map(pf, np.array([0.0, 0.0]), np.array([-1.0, 0.0]))


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0, 2 * np.pi), r=st.floats(0.05, 0.5))
def test_log_inverts_exp(bump, a, r):
    z0 = np.array([0.1, -0.1])
    v = r * np.array([np.cos(a), np.sin(a)])
    x, J, P = exp_flow(bump, z0, v[None])
    v2, J2 = log_map(bump, z0, x[0])
    assert np.allclose(v2, v, atol=1e-11)


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0, 2 * np.pi), b=st.floats(0, 2 * np.pi))
def test_transport_is_isometry_and_matches_ode(bump, a, b):
    z0 = np.array([0.1, -0.1])
    z = z0 + 0.4 * np.array([np.cos(a), np.sin(a)])
    c = unit_covector(bump, z0, b)
    P = transport_matrix(bump, z0, z)
    cz = P.T @ c
    assert abs(covector_norm(bump, z, cz) - 1.0) < 1e-9
    v0, _ = log_map(bump, z0, z)
    speed = np.exp(bump.phi(z0)[0]) * np.linalg.norm(v0)
    xi = np.array(v0) * np.exp(2 * bump.phi(z0)[0]) / speed   # flat of the unit velocity
    path = shoot(bump, z0, xi)
    assert np.allclose(parallel_transport(path, c, speed), cz, atol=1e-8)


def test_frames(bump):
    pf = _field(bump)
    F0 = coframe(bump, pf.z0, pf.zeta1)
    assert np.allclose(F0.gram(bump), np.eye(2), atol=1e-14) and F0.orientation() == 1
    for z, xi in sample_neighborhood(pf, 5, np.random.default_rng(2)):
        w1, _ = pair_map(pf, z, xi)
        F = frame_map(bump, pf.z0, F0, z, w1)
        assert np.allclose(F.gram(bump), np.eye(2), atol=1e-9)
        assert F.orientation() == 1


def test_admissibility(euclid):
    z = np.zeros(2)
    v = admissible_check(euclid, z, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert v.admissible and len(v.crossings) == 1
    v = admissible_check(euclid, z, np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert not v.admissible and v.reasons == ["collinear-directions"]


def test_lens_pair_has_two_crossings():
    chart = ChartMetric("conformal-bump", 1.0, amplitude=0.5, center=(0.0, 0.0), width=0.4)
    z = np.array([-0.7, 0.0])
    w1 = unit_covector(chart, z, 0.25)
    w2 = unit_covector(chart, z, -0.25)
    v = admissible_check(chart, z, w1, w2)
    assert not v.admissible and "multiple-crossings" in v.reasons
    weak = ChartMetric("conformal-bump", 1.0, amplitude=0.2, center=(0.0, 0.0), width=0.4)
    assert admissible_check(weak, z, unit_covector(weak, z, 0.25), unit_covector(weak, z, -0.25)).admissible
