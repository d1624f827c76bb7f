import math

import numpy as np
import pytest

from omflow import geometry, lagrangian, mpp
from omflow.transport import Curve, line_curve


def test_bvp_euclidean_straight_line():
    fam = geometry.euclidean(2)
    sol = mpp.solve_mpp_bvp(fam, geometry.zero_field(2), 1.0,
                            [0.0, 0.0], [1.0, 2.0], steps=100)
    assert sol.converged
    for t in (0.25, 0.5, 0.9):
        assert np.allclose(sol.curve.phi(t), [t, 2.0 * t], atol=1e-6)
    assert sol.action == pytest.approx(2.5, abs=1e-6)


def test_bvp_euclidean_constant_drift():
    # constant Z leaves the EL equation as phi'' = 0; the optimal path is
    # still the chord and the action is int 1/2 |mu - phi'|^2
    fam = geometry.euclidean(2)
    mu = np.array([1.0, 0.0])
    sol = mpp.solve_mpp_bvp(fam, geometry.constant_field(mu), 1.0,
                            [0.0, 0.0], [1.0, 2.0], steps=100)
    for t in (0.3, 0.7):
        assert np.allclose(sol.curve.phi(t), [t, 2.0 * t], atol=1e-6)
    v = np.array([1.0, 2.0])
    assert sol.action == pytest.approx(0.5 * np.sum((mu - v) ** 2), abs=1e-6)


def test_direct_euclidean_knots_collinear():
    fam = geometry.euclidean(2)
    res = mpp.minimize_action_direct(fam, geometry.zero_field(2), 1.0,
                                     [0.0, 0.0], [1.0, 1.0], n_knots=20)
    ts = np.linspace(0.0, 1.0, 21)
    pts = np.array([res.curve.phi(t) for t in ts])
    # straight chord: x and y coordinates equal all along
    assert np.max(np.abs(pts[:, 0] - pts[:, 1])) < 1e-5
    assert np.max(np.abs(pts[:, 0] - ts)) < 1e-5


def test_direct_never_beats_minimizer_bound():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    Z = geometry.zero_field(2)
    T = 0.2
    x0, x1 = [0.1, 0.0], [0.5, 0.3]
    res = mpp.minimize_action_direct(fam, Z, T, x0, x1, n_knots=40)
    chord = line_curve(T, x0, x1)
    assert res.action <= lagrangian.action(fam, Z, chord) + 1e-10


def test_el_residual_straight_line_flat():
    fam = geometry.euclidean(2)
    curve = line_curve(1.0, [0.0, 0.0], [1.0, -1.0])
    rep = mpp.el_residual(fam, geometry.zero_field(2), curve, n_grid=20)
    assert rep.max_norm < 1e-8


def test_great_circle_el_residual():
    # round geodesic on the alpha = 1/3 backward-flow sphere with speed
    # proportional to 1/c(t) solves the Euler-Lagrange equation exactly
    alpha, c0 = 1.0 / 3.0, 1.0
    fam = geometry.sphere_ricci(2, alpha=alpha, c0=c0, time_span=(0.0, 1.0))
    k = 0.7

    def u(t):
        return 0.2 + (k / (alpha * 1.0)) * math.log((c0 + alpha * t) / c0)

    def phi(t):
        return np.array([math.cos(u(t)), math.sin(u(t))])

    def phi_dot(t):
        du = k / (c0 + alpha * t)
        return du * np.array([-math.sin(u(t)), math.cos(u(t))])

    curve = Curve(T=1.0, phi=phi, phi_dot=phi_dot)
    rep = mpp.el_residual(fam, geometry.zero_field(2), curve, n_grid=40)
    assert rep.max_norm < 1e-6


def test_alpha_one_third_coefficient_is_exactly_zero():
    alpha = 1.0 / 3.0
    assert (1.0 - 3.0 * alpha) / 12.0 == 0.0


def test_bvp_matches_direct_on_sphere():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    Z = geometry.zero_field(2)
    T = 0.2
    x0, x1 = [0.1, 0.0], [0.6, 0.4]
    sol = mpp.solve_mpp_bvp(fam, Z, T, x0, x1, steps=200)
    res = mpp.minimize_action_direct(fam, Z, T, x0, x1, n_knots=60)
    ts = np.linspace(0.0, T, 201)
    gap = np.array([np.linalg.norm(sol.curve.phi(t) - res.curve.phi(t))
                    for t in ts])
    assert math.sqrt(np.trapezoid(gap ** 2, ts)) < 1e-3
    assert abs(res.action - sol.action) / abs(sol.action) < 1e-5


def test_gradient_descent_variant_agrees():
    fam = geometry.euclidean(2)
    res = mpp.minimize_action_direct(fam, geometry.zero_field(2), 1.0,
                                     [0.0, 0.0], [1.0, 0.0], n_knots=12,
                                     method="gd", max_iter=2000)
    assert res.action == pytest.approx(0.5, abs=1e-5)


def test_el_residual_shrinks_with_knots():
    fam = geometry.sphere_ricci(2, alpha=-2.0, c0=1.0)
    Z = geometry.zero_field(2)
    T, x0, x1 = 0.2, [0.1, 0.0], [0.5, 0.3]
    norms = []
    for K in (20, 40):
        res = mpp.minimize_action_direct(fam, Z, T, x0, x1, n_knots=K)
        rep = mpp.el_residual(fam, Z, res.curve, n_grid=50)
        norms.append(rep.max_norm)
    assert norms[1] < norms[0] / 2.0  # at least first order in 1/K
