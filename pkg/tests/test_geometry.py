import math

import numpy as np
import pytest

from omflow import geometry
from omflow.errors import ConfigError, NotPositiveDefinite


def test_euclidean_flat():
    fam = geometry.euclidean(3)
    x = np.array([0.3, -1.0, 2.0])
    cur = geometry.curvature(fam, 0.5, x)
    assert cur.scalar == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(cur.christoffel, 0.0)


def test_unit_sphere_scalar_curvature():
    # round S^2 of radius 1 has R = 2 everywhere
    fam = geometry.static_sphere(2, c0=1.0)
    for x in ([0.0, 0.0], [0.4, -0.2], [1.1, 0.7]):
        cur = geometry.curvature(fam, 0.0, np.array(x))
        assert cur.scalar == pytest.approx(2.0, abs=1e-7)
        # closed form agrees with the finite-difference pipeline
        assert geometry.scalar_curvature(fam, 0.0, np.array(x)) == \
            pytest.approx(2.0, abs=1e-12)


def test_sphere_n3_scalar_curvature():
    fam = geometry.static_sphere(3, c0=2.0)
    cur = geometry.curvature(fam, 0.0, np.array([0.2, 0.1, -0.3]))
    assert cur.scalar == pytest.approx(6.0 / 2.0, rel=1e-7)


def test_ricci_flow_invariant():
    # dg/dt = alpha * Ric holds for the shrinking-sphere family
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    t, x = 0.05, np.array([0.3, -0.4])
    cur = geometry.curvature(fam, t, x)
    resid = fam.eval_dg_dt(t, x) - (-2.0) * cur.ricci
    assert np.max(np.abs(resid)) < 1e-8


def test_ricci_tensor_einstein_sphere():
    # Ric = (R/n) g on a round sphere
    fam = geometry.static_sphere(2, c0=1.0)
    x = np.array([0.5, 0.2])
    cur = geometry.curvature(fam, 0.0, x)
    g = fam.g(0.0, x)
    assert np.allclose(cur.ricci, g, atol=1e-8)


def test_metric_not_positive_definite():
    bad = geometry.MetricFamily(
        dim=2, time_span=(0.0, 1.0),
        chart_lo=np.array([-1.0, -1.0]), chart_hi=np.array([1.0, 1.0]),
        g=lambda t, x: np.diag([1.0, -1.0]), name="bad")
    with pytest.raises(NotPositiveDefinite):
        geometry.metric_at(bad, 0.0, np.zeros(2))


def test_divergence_linear_field_euclidean():
    fam = geometry.euclidean(2)
    A = np.array([[1.0, 2.0], [0.5, -3.0]])
    Z = geometry.VectorField(Z=lambda t, x: A @ x, dZ_dx=lambda t, x: A)
    assert geometry.divergence(fam, Z, 0.0, np.array([0.4, 0.6])) == \
        pytest.approx(np.trace(A))


def test_divergence_with_metric_volume():
    # div Z = dZ/dx + Z * (d/dx log sqrt(g)); zero for constant g
    fam = geometry.flat_torus([1.0, 2.0], [0.3, -0.1])
    Z = geometry.constant_field([1.0, 1.0])
    assert geometry.divergence(fam, Z, 0.2, np.array([0.1, 0.1])) == \
        pytest.approx(0.0, abs=1e-12)


def test_trace_gdot_conformal():
    # g = e^{2 lam(t)} delta  =>  tr_g gdot = 2 n lam'
    fam = geometry.conformal(3, lam=lambda t: 0.5 * t, lam_dot=lambda t: 0.5)
    assert geometry.trace_gdot(fam, 0.7, np.zeros(3)) == pytest.approx(3.0)


def test_trace_gdot_shrinking_sphere():
    # g = c(t) * round metric, c' = alpha(n-1)  =>  tr_g gdot = n c'/c
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    t = 0.1
    c = 1.0 - 2.0 * t
    assert geometry.trace_gdot(fam, t, np.array([0.3, 0.3])) == \
        pytest.approx(2.0 * (-2.0) / c, rel=1e-10)


def test_orthonormal_frame_gram():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    t, x = 0.1, np.array([0.7, -0.2])
    frame = geometry.orthonormal_frame(fam, t, x)
    gram = geometry.gram(fam, t, x, frame)
    assert np.allclose(gram, np.eye(2), atol=1e-12)


def test_sphere_distance_symmetry_and_zero():
    fam = geometry.static_sphere(2)
    x, y = np.array([0.1, 0.2]), np.array([-0.4, 0.9])
    assert fam.eval_distance(0.0, x, x) == pytest.approx(0.0, abs=1e-12)
    assert fam.eval_distance(0.0, x, y) == \
        pytest.approx(fam.eval_distance(0.0, y, x))


def test_sphere_distance_scales_with_radius():
    fam1 = geometry.static_sphere(2, c0=1.0)
    fam4 = geometry.static_sphere(2, c0=4.0)
    x, y = np.array([0.0, 0.0]), np.array([0.3, 0.0])
    assert fam4.eval_distance(0.0, x, y) == \
        pytest.approx(2.0 * fam1.eval_distance(0.0, x, y))


def test_fd_fallback_matches_analytic_dgdx():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    t, x = 0.05, np.array([0.4, -0.6])
    analytic = fam.eval_dg_dx(t, x)
    stripped = geometry.MetricFamily(
        dim=2, time_span=fam.time_span, chart_lo=fam.chart_lo,
        chart_hi=fam.chart_hi, g=fam.g, name="fd")
    fd = stripped.eval_dg_dx(t, x)
    assert np.max(np.abs(fd - analytic)) < 1e-8


def test_family_from_config():
    fam = geometry.family_from_config(
        {"name": "sphere_ricci", "n": "2", "alpha": "-2", "c0": "1",
         "t_max": "0.2"})
    assert fam.dim == 2
    assert fam.time_span[1] == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        geometry.family_from_config({"name": "klein_bottle"})
    with pytest.raises(ConfigError):
        geometry.family_from_config({})


def test_out_of_domain():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    from omflow.errors import OutOfDomain
    with pytest.raises(OutOfDomain):
        geometry.metric_at(fam, 0.0, np.array([10.0, 0.0]))
    with pytest.raises(OutOfDomain):
        geometry.metric_at(fam, 99.0, np.zeros(2))
