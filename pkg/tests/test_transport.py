import math

import numpy as np
import pytest

from omflow import geometry, transport
from omflow.errors import NotOrthonormal


def wiggly_curve(T, dim, seed):
    rng = np.random.default_rng(seed)
    amp = 0.3 * rng.standard_normal((dim, 3))
    freq = rng.integers(1, 4, size=(dim, 3))

    def phi(t):
        return np.sum(amp * np.sin(freq * 2 * np.pi * t / T), axis=1)

    def phi_dot(t):
        return np.sum(amp * freq * np.cos(freq * 2 * np.pi * t / T),
                      axis=1) * 2 * np.pi / T

    return transport.Curve(T=T, phi=phi, phi_dot=phi_dot)


def test_transport_euclidean_is_identity():
    fam = geometry.euclidean(2)
    curve = wiggly_curve(1.0, 2, seed=1)
    fp = transport.parallel_transport(fam, curve, np.eye(2), steps=200)
    assert np.allclose(fp.frames[-1], np.eye(2), atol=1e-12)


def test_transport_orthonormality_sphere():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    curve = wiggly_curve(fam.time_span[1], 2, seed=2)
    frame0 = geometry.orthonormal_frame(fam, 0.0, curve.phi(0.0))
    fp = transport.parallel_transport(fam, curve, frame0, steps=2000)
    assert transport.orthonormality_defect(fam, curve, fp) < 1e-8


def test_transport_defect_shrinks_with_step():
    # the torus/euclidean transport ODEs are diagonal and integrate to
    # machine precision at any step, so measure the order on the sphere
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    T = fam.time_span[1]
    curve = wiggly_curve(T, 2, seed=3)
    frame0 = geometry.orthonormal_frame(fam, 0.0, curve.phi(0.0))
    d_coarse = transport.orthonormality_defect(
        fam, curve, transport.parallel_transport(fam, curve, frame0, steps=100))
    d_fine = transport.orthonormality_defect(
        fam, curve, transport.parallel_transport(fam, curve, frame0, steps=200))
    assert d_coarse / d_fine >= 8.0


def test_transport_rejects_bad_frame():
    fam = geometry.euclidean(2)
    curve = wiggly_curve(1.0, 2, seed=4)
    with pytest.raises(NotOrthonormal):
        transport.parallel_transport(fam, curve, 2.0 * np.eye(2), steps=50)


def test_exp_map_preserves_radius():
    # d(x, exp_x(v)) = |v|_g on a complete manifold inside r_inj
    fam = geometry.static_sphere(2)
    x = np.array([0.2, 0.1])
    frame = geometry.orthonormal_frame(fam, 0.0, x)
    v = 0.3 * frame[:, 0] + 0.2 * frame[:, 1]
    g = fam.g(0.0, x)
    vnorm = math.sqrt(v @ g @ v)
    y = transport.exp_map(fam, 0.0, x, v, steps=400)
    assert fam.eval_distance(0.0, x, y) == pytest.approx(vnorm, abs=1e-8)


def test_normal_coordinates_round_trip():
    fam = geometry.static_sphere(2)
    ncf = transport.normal_frame(fam, 0.0, np.array([0.3, -0.2]))
    w = np.array([0.05, -0.08])
    assert np.allclose(ncf.to_normal(ncf.from_normal(w)), w, atol=1e-10)
    assert np.allclose(ncf.to_normal(ncf.center), 0.0, atol=1e-12)


def test_normal_metric_identity_at_origin():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    ncf = transport.normal_frame(fam, 0.05, np.array([0.4, 0.1]))
    G = ncf.pullback_metric(np.zeros(2))
    assert np.allclose(G, np.eye(2), atol=1e-9)


def test_cartan_quadratic_flat_torus():
    # R = 0, so the fitted quadratic coefficient is pure fd noise
    fam = geometry.flat_torus([1.0, 2.0], [0.3, -0.5])
    rep = transport.cartan_expansion_check(fam, 0.0, np.array([0.5, 0.5]),
                                           radii=(1e-2,))
    assert rep.max_deviation < 1e-6


def test_cartan_sphere_deviation_and_order():
    fam = geometry.static_sphere(2)
    rep = transport.cartan_expansion_check(fam, 0.0, np.array([0.1, 0.2]),
                                           radii=(1e-2, 5e-3))
    assert rep.max_deviation < 1e-4
    assert rep.remainder_order >= 3.0


def test_hara_identities_sphere():
    fam = geometry.static_sphere(2)
    ncf = transport.normal_frame(fam, 0.0, np.array([0.25, -0.15]))
    rng = np.random.default_rng(6)
    for _ in range(4):
        w = 1e-2 * rng.standard_normal(2)
        gamma = transport.hara_drift(fam, ncf, w)
        Ginv = ncf.pullback_inverse_metric(w)
        lhs = np.sum(1.0 - np.diag(Ginv))
        rhs = 2.0 * float(gamma @ w)
        assert lhs == pytest.approx(rhs, abs=1e-6)
        # Gauss lemma: the inverse metric fixes the radial direction
        assert np.allclose(Ginv @ w, w, atol=1e-6)


def test_curve_csv_round_trip(tmp_path):
    curve = wiggly_curve(1.0, 2, seed=7)
    path = tmp_path / "curve.csv"
    transport.curve_to_csv(curve, path, m=101)
    back = transport.curve_from_csv(path)
    for t in (0.0, 0.31, 0.77, 1.0):
        assert np.allclose(back.phi(t), curve.phi(t), atol=1e-6)


def test_line_curve():
    c = transport.line_curve(2.0, [0.0, 0.0], [2.0, 4.0])
    assert np.allclose(c.phi(1.0), [1.0, 2.0])
    assert np.allclose(c.phi_dot(0.5), [1.0, 2.0])
