import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbfbi.geodesic import (TrappedGeodesic, brute_force_crossings, jacobi_scan, nontangential_check,
                            self_intersection_scan, shoot, speed_drift, su_check)
from gbfbi.manifold import ChartMetric, unit_covector, vector_norm


def test_euclidean_chord_lengths(euclid):
    p = shoot(euclid, [0.5, 0.0], [1.0, 0.0])
    assert abs(p.t_in - 1.5) < 1e-9 and abs(p.t_out - 0.5) < 1e-9
    assert abs(p.entry_angle - np.pi / 2) < 1e-9 and abs(p.exit_angle - np.pi / 2) < 1e-9


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-0.7, 0.7), y=st.floats(-0.7, 0.7), a=st.floats(0, 2 * np.pi))
def test_bump_speed_and_reversal(bump, x, y, a):
    z = np.array([x, y])
    xi = unit_covector(bump, z, a)
    p = shoot(bump, z, xi)
    assert speed_drift(p) < 1e-9
    q = p.reversed()
    assert abs(q.t_in - p.t_out) < 1e-12
    t = np.linspace(-p.t_in, p.t_out, 7)
    assert np.allclose(q.x(-t), p.x(t), atol=1e-12)
    # both endpoints on the boundary
    for s in (-p.t_in, p.t_out):
        assert abs(np.linalg.norm(p.x(s)[0]) - 1.0) < 1e-8


def test_requires_unit_covector(euclid):
    with pytest.raises(ValueError):
        shoot(euclid, [0.0, 0.0], [2.0, 0.0])


def test_tangential_chord_flagged(euclid):
    d = 0.999
    p = shoot(euclid, [0.0, d], [1.0, 0.0])
    angle = np.arcsin(np.sqrt(1 - d * d))
    assert abs(p.entry_angle - angle) < 1e-6
    assert not nontangential_check(p).nontangential


@pytest.mark.parametrize("K,R", [(1.0, 4.0), (4.0, 2.0)])
def test_conjugate_times_match_sine_roots(K, R):
    chart = ChartMetric("constant-curvature", R, K=K)
    z = np.array([-0.9 * R, 0.0])
    xi = unit_covector(chart, z, 0.0)
    p = shoot(chart, z, xi)
    t = np.linspace(-p.t_in, p.t_out, 50)
    assert np.allclose(p.state(t)[:, 4], np.sin(np.sqrt(K) * t) / np.sqrt(K), atol=1e-8)
    roots = jacobi_scan(p)
    expect = [k * np.pi / np.sqrt(K) for k in range(1, 5) if k * np.pi / np.sqrt(K) < p.t_out]
    assert len(roots) == len(expect)
    assert np.allclose(roots, expect, atol=1e-6)


def test_negative_curvature_has_no_conjugate_points():
    chart = ChartMetric("constant-curvature", 1.5, K=-1.0)
    z = np.array([-1.2, 0.3])
    p = shoot(chart, z, unit_covector(chart, z, 0.2))
    t = np.linspace(-p.t_in, p.t_out, 40)
    assert np.allclose(p.state(t)[:, 4], np.sinh(t), atol=1e-8)
    assert jacobi_scan(p) == []


def test_self_intersection_matches_brute_force():
    chart = ChartMetric("conformal-bump", 2.0, amplitude=1.5, center=(0.0, 0.0), width=0.4)
    z = np.array([0.0, 0.2])
    p = shoot(chart, z, unit_covector(chart, z, 0.0))
    hits = self_intersection_scan(p)
    assert len(hits) >= 1
    brute = brute_force_crossings(p, None, 30000, 2e-3, 1e-2)
    assert len(brute) >= 1
    x_hit = p.x(hits[0][0])[0]
    assert min(np.linalg.norm(p.x(b[0])[0] - x_hit) for b in brute) < 5e-3


def test_su_check(euclid, sphere_cap):
    assert su_check(euclid, [0.3, -0.2], [0.0, 1.0]).passed
    z = np.array([1.9, 0.0])
    eta = unit_covector(sphere_cap, z, np.pi / 2)
    v = su_check(sphere_cap, z, eta, n_dir=1)
    assert not v.passed and "conjugate-point" in v.reasons
    assert any(abs(abs(t) - np.pi) < 1e-4 for t in v.conjugate_times)
