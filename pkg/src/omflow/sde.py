"""Diffusion simulation, small-ball (tube) probabilities, and asymptotics.

The diffusion dX = b dt + sigma dW (generator 1/2 Laplace_g + Z in chart
coordinates) is simulated by Euler-Maruyama.  Tube probabilities
P[ sup_t d_{g(t)}(X_t, phi(t)) <= eps f(t) ] are Monte-Carlo estimates over
independent chains; chain c draws its noise from its own
Philox(SeedSequence((seed, c))) stream, so an estimate depends only on
(seed, n_paths) -- not on block size, thread count, or how many other
chains ran.

Discrete monitoring of a continuous barrier overestimates survival; by
default the barrier is pulled in by beta * sqrt(dt) with beta = 0.5826
(the Broadie-Glasserman-Kou continuity correction), which brings the
dt = 2.5e-4 estimates within a fraction of a percent of the exact
one-dimensional reflection series.  Pass barrier_correction=False for the
raw discrete estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import jv

from . import geometry, lagrangian
from .errors import DegenerateRatio, UnsupportedDimension
from .geometry import MetricFamily, VectorField
from .lagrangian import WeightFunction, unit_weight
from .transport import Curve

Array = np.ndarray

BGK_BETA = 0.5826
BLOCK_CHAINS = 4096
NOISE_CHUNK = 512  # Euler steps of noise generated per chain at a time


@dataclass(frozen=True)
class DiffusionSpec:
    """Euler-Maruyama discretization of dX = b dt + sigma dW on [0, T]."""

    family: MetricFamily
    Z: VectorField
    T: float
    dt: Optional[float] = None

    def step_size(self) -> float:
        return self.dt if self.dt is not None else self.T / 4000.0

    def coefficients(self, t: float, X: Array) -> tuple[Array, Array]:
        """Drift (m, n) and elementwise diffusion sigma (m, n) for states X.

        Families without an sde_coefficients hook fall back to the generic
        chart formulas (one chain at a time -- slow, meant for small runs).
        """
        if self.family.sde_coefficients is not None:
            b, sig = self.family.sde_coefficients(t, X)
        else:
            b, sig = _generic_coefficients(self.family, t, X)
        return b + _batch_field(self.Z, t, X), sig


def _batch_field(Z: VectorField, t: float, X: Array) -> Array:
    """Z evaluated on (m, n) chain states; broadcasts constant fields."""
    out = np.asarray(Z.Z(t, X), dtype=float)
    if out.shape == X.shape or out.shape == (X.shape[-1],):
        return out
    return np.stack([Z.eval(t, x) for x in X])


def _generic_coefficients(family: MetricFamily, t: float, X: Array):
    """drift^i = -1/2 g^{jk} Gamma^i_{jk},  sigma = sqrt(g^{-1}) (diagonal
    part only is NOT enough in general, so this path returns full matrices
    folded through an eigen square root and is restricted to diagonal-metric
    use; built-in families all provide their own hook)."""
    m, n = X.shape
    b = np.empty((m, n))
    sig = np.empty((m, n))
    for c in range(m):
        x = X[c]
        ginv = geometry.inverse_metric(family, t, x)
        gam = geometry.christoffel(family, t, x)
        b[c] = -0.5 * np.einsum('ikl,kl->i', gam, ginv)
        root = geometry.spd_sqrt(ginv)
        off = root - np.diag(np.diag(root))
        if np.max(np.abs(off)) > 1e-12 * np.max(np.abs(root)):
            raise NotImplementedError(
                "generic SDE path supports diagonal metrics only; give the "
                "family an sde_coefficients hook")
        sig[c] = np.diag(root)
    return b, sig


@dataclass(frozen=True)
class SimPath:
    t_grid: Array
    x: Array  # (len(t_grid), n)


@dataclass(frozen=True)
class TubeEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    n_paths: int
    n_hit: int
    eps: float
    dt: float
    seed: int
    barrier_correction: bool


def simulate_path(spec: DiffusionSpec, x0, seed: int = 0) -> SimPath:
    """One Euler-Maruyama trajectory, for inspection and plotting."""
    x0 = np.asarray(x0, dtype=float)
    dt = spec.step_size()
    steps = int(round(spec.T / dt))
    t_grid = np.linspace(0.0, spec.T, steps + 1)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 0))))
    xs = np.empty((steps + 1, len(x0)))
    xs[0] = x0
    X = x0[None, :].copy()
    sqdt = math.sqrt(dt)
    for i in range(steps):
        b, sig = spec.coefficients(t_grid[i], X)
        X = X + b * dt + sig * rng.standard_normal(X.shape) * sqdt
        xs[i + 1] = X[0]
    return SimPath(t_grid=t_grid, x=xs)


def _distances(family: MetricFamily, t: float, X: Array, center: Array) -> Array:
    if family.distance is not None:
        return np.array([family.distance(t, x, center) for x in X])
    g = geometry.metric_at(family, t, center)
    d = X - center[None, :]
    return np.sqrt(np.einsum('ci,ij,cj->c', d, g, d))


def _batch_distances(family: MetricFamily, t: float, X: Array,
                     center: Array) -> Array:
    """Vectorized chart distance for the built-in families; falls back to
    the per-chain callable otherwise."""
    name = family.name.split("+")[0]
    if name in ("euclidean", "conformal", "flat_torus"):
        g = np.diag(geometry.metric_at(family, t, center))
        d = X - center[None, :]
        return np.sqrt((d * d) @ g)
    if name in ("sphere_ricci", "static_sphere"):
        # geodesic distance through inverse stereographic projection
        c = family.g(t, np.zeros(family.dim))[0, 0] / 4.0
        p = _to_sphere(X)
        q = _to_sphere(center[None, :])[0]
        half_chord = 0.5 * np.linalg.norm(p - q[None, :], axis=-1)
        return math.sqrt(c) * 2.0 * np.arcsin(np.minimum(half_chord, 1.0))
    return _distances(family, t, X, center)


def _to_sphere(X: Array) -> Array:
    r2 = np.sum(X * X, axis=-1, keepdims=True)
    return np.concatenate([2.0 * X, r2 - 1.0], axis=-1) / (1.0 + r2)


def _tube_core(spec: DiffusionSpec, curve: Curve, eps: float, n_paths: int,
               seed: int, weight: WeightFunction, barrier_correction: bool,
               block: int) -> tuple[Array, float]:
    """Per-chain 0/1 survival indicators for the weighted tube."""
    dt = spec.step_size()
    steps = int(round(spec.T / dt))
    t_grid = np.linspace(0.0, spec.T, steps + 1)
    phi_grid = np.stack([np.asarray(curve.phi(t), dtype=float) for t in t_grid])
    corr = BGK_BETA * math.sqrt(dt) if barrier_correction else 0.0
    barrier = np.array([max(eps * weight.check(t) - corr, 0.0)
                        for t in t_grid])
    fam = spec.family
    n = phi_grid.shape[1]
    sqdt = math.sqrt(dt)
    indicators = np.zeros(n_paths)

    done = 0
    while done < n_paths:
        m = min(block, n_paths - done)
        gens = [np.random.Generator(np.random.Philox(
            np.random.SeedSequence((seed, done + c)))) for c in range(m)]
        X = np.tile(phi_grid[0], (m, 1))
        alive = np.ones(m, dtype=bool)
        i = 0
        while i < steps and alive.any():
            chunk = min(NOISE_CHUNK, steps - i)
            live = np.nonzero(alive)[0]
            # each chain consumes its own stream; dead chains stop drawing
            noise = np.empty((live.size, chunk, n))
            for row, c in enumerate(live):
                noise[row] = gens[c].standard_normal((chunk, n))
            Xl = X[live]
            alive_l = np.ones(live.size, dtype=bool)
            for j in range(chunk):
                idx = np.nonzero(alive_l)[0]
                if idx.size == 0:
                    break
                t = t_grid[i + j]
                b, sig = spec.coefficients(t, Xl[idx])
                Xl[idx] = Xl[idx] + b * dt + sig * noise[idx, j] * sqdt
                d = _batch_distances(fam, t_grid[i + j + 1], Xl[idx],
                                     phi_grid[i + j + 1])
                out = d > barrier[i + j + 1]
                if np.any(out):
                    alive_l[idx[out]] = False
            X[live] = Xl
            alive[live] = alive_l
            i += chunk
        indicators[done:done + m] = alive.astype(float)
        done += m
    return indicators, dt


def tube_probability(spec: DiffusionSpec, curve: Curve, eps: float,
                     n_paths: int = 100_000, seed: int = 0,
                     weight: Optional[WeightFunction] = None,
                     barrier_correction: bool = True,
                     block: int = BLOCK_CHAINS) -> TubeEstimate:
    """Monte-Carlo P[ sup_t d_{g(t)}(X_t, phi(t)) <= eps f(t) ], X_0 = phi(0).

    Survival is checked at every Euler step against the (optionally
    continuity-corrected) barrier.  Returns a 95% Wilson interval, which
    stays informative when the hit count is zero.
    """
    if weight is None:
        weight = unit_weight()
    ind, dt = _tube_core(spec, curve, eps, n_paths, seed, weight,
                         barrier_correction, block)
    n_hit = int(ind.sum())
    lo, hi = _wilson_interval(n_hit, n_paths)
    return TubeEstimate(p_hat=n_hit / n_paths, ci_low=lo, ci_high=hi,
                        n_paths=n_paths, n_hit=n_hit, eps=eps, dt=dt,
                        seed=seed, barrier_correction=barrier_correction)


def _wilson_interval(k: int, n: int, z: float = 1.959963985) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def reflection_series(T: float, eps: float, terms: Optional[int] = None) -> float:
    """Exact P[ sup_{t<=T} |B_t| <= eps ] for 1-d standard Brownian motion.

    Terms are added until they fall below 1e-17 (or `terms` if given).
    """
    total = 0.0
    k = 0
    while True:
        term = ((4.0 / math.pi) * (-1) ** k / (2 * k + 1)
                * math.exp(-(2 * k + 1) ** 2 * math.pi ** 2 * T
                           / (8 * eps ** 2)))
        total += term
        k += 1
        if terms is not None:
            if k >= terms:
                break
        elif abs(term) < 1e-17 or k >= 100_000:
            break
    return total


def girsanov_tube_factor(T: float, eps: float, mu: float,
                         terms: int = 60) -> float:
    """Exact E[ 1_{sup|B|<=eps} exp(mu B_T - mu^2 T / 2) ] for standard 1-d
    Brownian motion, by eigenfunction expansion of the killed heat kernel on
    (-eps, eps).  This is the Girsanov weight of the static tube under the
    drift-mu measure, so

        P_mu[sup |X_t| <= eps] = girsanov_tube_factor(T, eps, mu)

    and the exact finite-eps ratio of the moving tube (around mu*t) to the
    static one is reflection_series(T, eps) / girsanov_tube_factor(...).
    """
    total = 0.0
    for k in range(terms):
        m = 2 * k + 1  # even modes vanish at the centre
        a = m * math.pi / (2.0 * eps)
        sign = (-1) ** k  # sin(m pi / 2)
        # int_{-eps}^{eps} sin(a(y + eps)) e^{mu y} dy, closed form
        def anti(y):
            return (math.exp(mu * y)
                    * (mu * math.sin(a * (y + eps)) - a * math.cos(a * (y + eps)))
                    / (mu * mu + a * a))
        integral = anti(eps) - anti(-eps)
        total += (sign / eps) * math.exp(-a * a * T / 2.0) * integral
    return total * math.exp(-0.5 * mu * mu * T)


def lambda1_dirichlet(n: int) -> float:
    """Smallest Dirichlet eigenvalue of -1/2 Laplace on the unit ball in R^n.

    Equals j^2/2 where j is the first positive zero of the Bessel function
    J_{n/2-1}.  Found by stepping a 0.1 bracket out from nu and bisecting.
    """
    if not isinstance(n, int) or n < 1 or n > 10:
        raise UnsupportedDimension(f"dimension {n} outside 1..10")
    nu = n / 2.0 - 1.0

    def f(x):
        return jv(nu, x)

    x = max(0.2, nu)  # J_nu has no positive zero below nu
    prev = f(x)
    while True:
        x2 = x + 0.1
        cur = f(x2)
        if prev * cur < 0.0:
            root = brentq(f, x, x2, xtol=1e-14, rtol=8.9e-16)
            return 0.5 * root * root
        x, prev = x2, cur


@dataclass(frozen=True)
class AsymptoticPrediction:
    lambda1: float
    action: float
    time_scale: float       # int_0^T f^{-2}
    eps: float
    log_p: float            # -lambda1 * time_scale / eps^2 - action


def asymptotic_prediction(family: MetricFamily, Z: VectorField, curve: Curve,
                          eps: float, weight: Optional[WeightFunction] = None,
                          quadrature_steps: int = 1000) -> AsymptoticPrediction:
    """Leading small-eps behaviour of the weighted tube probability:

        log P  ~  -lambda1 * (int_0^T f^{-2}) / eps^2  -  weighted action.
    """
    if weight is None:
        weight = unit_weight()
    lam1 = lambda1_dirichlet(family.dim)
    scale, _ = quad(lambda s: 1.0 / weight.check(s) ** 2, 0.0, curve.T,
                    limit=200)
    act = lagrangian.weighted_action(family, Z, weight, curve,
                                     quadrature_steps=quadrature_steps)
    return AsymptoticPrediction(lambda1=lam1, action=act, time_scale=scale,
                                eps=eps,
                                log_p=-lam1 * scale / eps ** 2 - act)


@dataclass(frozen=True)
class RatioResult:
    ratio: float
    ci_low: float
    ci_high: float
    predicted: float
    est_a: TubeEstimate
    est_b: TubeEstimate


def ratio_experiment(spec_a: DiffusionSpec, curve_a: Curve,
                     spec_b: DiffusionSpec, curve_b: Curve,
                     eps: float, n_paths: int = 200_000, seed: int = 0,
                     predicted: Optional[float] = None,
                     min_hits: int = 50,
                     weight: Optional[WeightFunction] = None,
                     barrier_correction: bool = True,
                     block: int = BLOCK_CHAINS) -> RatioResult:
    """Ratio of two tube probabilities at the same eps and seed.

    Sharing the seed couples the driving noise of the two estimates; the
    delta-method interval therefore uses the empirical covariance of the
    per-chain survival indicators, not independent binomial variances.
    """
    if weight is None:
        weight = unit_weight()
    ind_a, dt_a = _tube_core(spec_a, curve_a, eps, n_paths, seed, weight,
                             barrier_correction, block)
    ind_b, dt_b = _tube_core(spec_b, curve_b, eps, n_paths, seed, weight,
                             barrier_correction, block)
    est_a = _estimate_from(ind_a, n_paths, eps, dt_a, seed, barrier_correction)
    est_b = _estimate_from(ind_b, n_paths, eps, dt_b, seed, barrier_correction)
    if est_a.n_hit < min_hits or est_b.n_hit < min_hits:
        raise DegenerateRatio(
            f"too few tube hits for a ratio: {est_a.n_hit} / {est_b.n_hit} "
            f"(need >= {min_hits}); widen the tube, shorten the horizon, or "
            f"add paths")
    pa, pb = est_a.p_hat, est_b.p_hat
    r = pa / pb
    var_a = ind_a.var(ddof=1) / n_paths
    var_b = ind_b.var(ddof=1) / n_paths
    cov = float(np.cov(ind_a, ind_b, ddof=1)[0, 1]) / n_paths
    var_r = r * r * (var_a / pa ** 2 + var_b / pb ** 2 - 2 * cov / (pa * pb))
    half = 1.959963985 * math.sqrt(max(var_r, 0.0))
    return RatioResult(ratio=r, ci_low=r - half, ci_high=r + half,
                       predicted=(predicted if predicted is not None
                                  else float("nan")),
                       est_a=est_a, est_b=est_b)


def _estimate_from(ind, n_paths, eps, dt, seed, barrier_correction):
    n_hit = int(ind.sum())
    lo, hi = _wilson_interval(n_hit, n_paths)
    return TubeEstimate(p_hat=n_hit / n_paths, ci_low=lo, ci_high=hi,
                        n_paths=n_paths, n_hit=n_hit, eps=eps, dt=dt,
                        seed=seed, barrier_correction=barrier_correction)
