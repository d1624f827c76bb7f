import math

import numpy as np
import pytest

from omflow import geometry, sde
from omflow.errors import DegenerateRatio, UnsupportedDimension
from omflow.transport import constant_curve


def test_lambda1_closed_forms():
    assert sde.lambda1_dirichlet(1) == pytest.approx(math.pi ** 2 / 8,
                                                     abs=1e-12)
    assert sde.lambda1_dirichlet(3) == pytest.approx(math.pi ** 2 / 2,
                                                     abs=1e-12)
    # first zero of J_0 is 2.404825557695773
    assert sde.lambda1_dirichlet(2) == pytest.approx(
        0.5 * 2.404825557695773 ** 2, abs=1e-12)


def test_lambda1_monotone_in_dimension():
    vals = [sde.lambda1_dirichlet(n) for n in range(1, 11)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_lambda1_rejects_bad_dimension():
    with pytest.raises(UnsupportedDimension):
        sde.lambda1_dirichlet(0)
    with pytest.raises(UnsupportedDimension):
        sde.lambda1_dirichlet(11)


def test_reflection_series_value():
    # frozen against an independent evaluation of the alternating series
    assert sde.reflection_series(1.0, 0.5) == pytest.approx(
        0.009156990289760759, rel=1e-12)
    # short horizon: probability near 1
    assert sde.reflection_series(1e-4, 0.5) == pytest.approx(1.0, abs=1e-10)


def test_girsanov_factor_recovers_series_at_zero_drift():
    for T, eps in [(1.0, 0.5), (0.1, 0.3)]:
        assert sde.girsanov_tube_factor(T, eps, 1e-14) == pytest.approx(
            sde.reflection_series(T, eps), rel=1e-10)


def test_girsanov_factor_decreases_with_drift():
    vals = [sde.girsanov_tube_factor(0.1, 0.3, mu) for mu in (0.0, 0.5, 1.0)]
    assert vals[0] > vals[1] > vals[2]


def test_sphere_sde_coefficients_match_chart_formulas():
    # closed-form drift/sigma against the generic -1/2 g^{jk} Gamma^i_{jk}
    for n in (2, 3):
        fam = geometry.sphere_ricci(n, alpha=-2.0, c0=1.0)
        rng = np.random.default_rng(n)
        X = 0.8 * rng.standard_normal((5, n))
        t = 0.05
        b, sig = fam.sde_coefficients(t, X)
        for c in range(5):
            ginv = geometry.inverse_metric(fam, t, X[c])
            gam = geometry.christoffel(fam, t, X[c])
            b_ref = -0.5 * np.einsum('ikl,kl->i', gam, ginv)
            assert np.allclose(b[c], b_ref, atol=1e-8)
            assert np.allclose(np.diag(sig[c] ** 2), ginv, atol=1e-10)


def test_torus_sde_coefficients():
    fam = geometry.flat_torus([1.0, 4.0], [0.0, 0.0])
    b, sig = fam.sde_coefficients(0.0, np.zeros((1, 2)))
    assert np.allclose(b, 0.0)
    assert np.allclose(sig, [[1.0, 0.5]])


def test_simulate_path_deterministic():
    fam = geometry.euclidean(2)
    spec = sde.DiffusionSpec(fam, geometry.zero_field(2), T=0.5, dt=1e-3)
    p1 = sde.simulate_path(spec, [0.0, 0.0], seed=5)
    p2 = sde.simulate_path(spec, [0.0, 0.0], seed=5)
    assert np.array_equal(p1.x, p2.x)
    assert p1.x.shape == (501, 2)


def test_tube_probability_block_size_invariance():
    fam = geometry.euclidean(1)
    spec = sde.DiffusionSpec(fam, geometry.zero_field(1), T=0.5, dt=1e-3)
    curve = constant_curve(0.5, np.zeros(1))
    a = sde.tube_probability(spec, curve, 0.5, n_paths=3000, seed=1,
                             block=256)
    b = sde.tube_probability(spec, curve, 0.5, n_paths=3000, seed=1,
                             block=1000)
    assert a.n_hit == b.n_hit


def test_tube_probability_small_run_vs_series():
    fam = geometry.euclidean(1)
    spec = sde.DiffusionSpec(fam, geometry.zero_field(1), T=0.25, dt=5e-4)
    curve = constant_curve(0.25, np.zeros(1))
    est = sde.tube_probability(spec, curve, 0.5, n_paths=20000, seed=8)
    exact = sde.reflection_series(0.25, 0.5)
    assert est.ci_low <= exact <= est.ci_high


def test_barrier_correction_reduces_bias():
    # the raw discrete estimate overshoots the continuous-time value
    fam = geometry.euclidean(1)
    spec = sde.DiffusionSpec(fam, geometry.zero_field(1), T=0.25, dt=5e-4)
    curve = constant_curve(0.25, np.zeros(1))
    exact = sde.reflection_series(0.25, 0.5)
    raw = sde.tube_probability(spec, curve, 0.5, n_paths=40000, seed=8,
                               barrier_correction=False)
    corr = sde.tube_probability(spec, curve, 0.5, n_paths=40000, seed=8)
    assert raw.p_hat > corr.p_hat
    assert abs(corr.p_hat - exact) < abs(raw.p_hat - exact)


def test_ratio_identical_curves_is_one():
    fam = geometry.euclidean(1)
    spec = sde.DiffusionSpec(fam, geometry.zero_field(1), T=0.25, dt=1e-3)
    curve = constant_curve(0.25, np.zeros(1))
    res = sde.ratio_experiment(spec, curve, spec, curve, 0.5,
                               n_paths=5000, seed=3)
    assert res.ratio == 1.0
    assert res.est_a.n_hit == res.est_b.n_hit


def test_ratio_degenerate_raises():
    fam = geometry.euclidean(1)
    spec = sde.DiffusionSpec(fam, geometry.zero_field(1), T=1.0, dt=2e-3)
    curve = constant_curve(1.0, np.zeros(1))
    with pytest.raises(DegenerateRatio):
        sde.ratio_experiment(spec, curve, spec, curve, 0.05,
                             n_paths=2000, seed=3)


def test_wilson_interval_zero_hits():
    lo, hi = sde._wilson_interval(0, 1000)
    assert lo == 0.0
    assert 0.0 < hi < 0.01


def test_asymptotic_prediction_flat():
    fam = geometry.euclidean(1)
    curve = constant_curve(1.0, np.zeros(1))
    pred = sde.asymptotic_prediction(fam, geometry.zero_field(1), curve, 0.5)
    assert pred.lambda1 == pytest.approx(math.pi ** 2 / 8)
    assert pred.time_scale == pytest.approx(1.0)
    assert pred.action == pytest.approx(0.0, abs=1e-14)
    assert pred.log_p == pytest.approx(-(math.pi ** 2 / 8) / 0.25)


def test_asymptotic_log_p_approaches_mc():
    # at eps = 0.5 the leading-order exponent already captures most of log p
    fam = geometry.euclidean(1)
    pred = sde.asymptotic_prediction(fam, geometry.zero_field(1),
                                     constant_curve(1.0, np.zeros(1)), 0.5)
    exact = math.log(sde.reflection_series(1.0, 0.5))
    assert pred.log_p == pytest.approx(exact, rel=0.06)
