"""Tensor calculus for a time-dependent family of Riemannian metrics in a chart.

A family is presented by its metric components g_ij(t, x) in a single
coordinate chart with a declared domain box.  Derivatives not supplied
analytically fall back to central finite differences.  The module also ships
a small zoo of closed-form families (Euclidean, conformal, flat torus,
shrinking round sphere) used as ground truth throughout the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigError,
    NotPositiveDefinite,
    OutOfDomain,
    SingularMetric,
)

Array = np.ndarray

# Relative finite-difference step: h_x = FD_STEP_FACTOR * domain diameter.
FD_STEP_FACTOR = 1e-5
# Eigenvalue floor used when taking SPD matrix square roots.
EIG_FLOOR = 1e-14


@dataclass(frozen=True)
class MetricFamily:
    """A charted manifold with time-dependent metric components.

    ``g(t, x)`` returns the symmetric matrix g_ij(t, x).  Optional callables
    supply analytic derivatives; missing ones are replaced by central
    differences with step ``h_x``.  ``scalar_curvature`` and ``distance``
    are optional closed forms used when available (the full curvature
    pipeline stays available for cross-checking them).
    """

    dim: int
    time_span: tuple[float, float]
    chart_lo: Array
    chart_hi: Array
    g: Callable[[float, Array], Array]
    dg_dt: Optional[Callable[[float, Array], Array]] = None
    dg_dx: Optional[Callable[[float, Array], Array]] = None  # [k,i,j]
    d2g_dx: Optional[Callable[[float, Array], Array]] = None  # [k,l,i,j]
    distance: Optional[Callable[[float, Array, Array], float]] = None
    scalar_curvature: Optional[Callable[[float, Array], float]] = None
    r_inj: Optional[Callable[[float], float]] = None
    # Vectorised (drift, sigma) hook for the sde module; sigma may be a
    # scalar, a diagonal (n,) array or a full (n, n) matrix per state.
    sde_coefficients: Optional[Callable[[float, Array], tuple[Array, Array]]] = None
    h_x: float = field(default=0.0)
    h_t: float = 1e-6
    name: str = "custom"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.h_x == 0.0:
            diam = float(np.max(self.chart_hi - self.chart_lo))
            if not math.isfinite(diam):
                diam = 1.0
            object.__setattr__(self, "h_x", FD_STEP_FACTOR * diam)

    # -- domain ------------------------------------------------------------

    def contains(self, t: float, x: Array) -> bool:
        t0, t1 = self.time_span
        if not (t0 - 1e-12 <= t <= t1 + 1e-12):
            return False
        return bool(np.all(x >= self.chart_lo - 1e-12) and np.all(x <= self.chart_hi + 1e-12))

    def check_domain(self, t: float, x: Array) -> None:
        if not self.contains(t, x):
            raise OutOfDomain(f"(t={t}, x={x}) outside time span {self.time_span} "
                              f"or chart box of family '{self.name}'")

    # -- derivative fallbacks ----------------------------------------------

    def eval_dg_dt(self, t: float, x: Array) -> Array:
        if self.dg_dt is not None:
            return np.asarray(self.dg_dt(t, x), dtype=float)
        h = self.h_t
        return (np.asarray(self.g(t + h, x)) - np.asarray(self.g(t - h, x))) / (2 * h)

    def eval_dg_dx(self, t: float, x: Array) -> Array:
        if self.dg_dx is not None:
            return np.asarray(self.dg_dx(t, x), dtype=float)
        n, h = self.dim, self.h_x
        out = np.empty((n, n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            out[k] = (np.asarray(self.g(t, x + e)) - np.asarray(self.g(t, x - e))) / (2 * h)
        return out

    def eval_d2g_dx(self, t: float, x: Array) -> Array:
        if self.d2g_dx is not None:
            return np.asarray(self.d2g_dx(t, x), dtype=float)
        n, h = self.dim, self.h_x
        out = np.empty((n, n, n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            out[k] = (self.eval_dg_dx(t, x + e) - self.eval_dg_dx(t, x - e)) / (2 * h)
        return out

    def eval_distance(self, t: float, x: Array, y: Array) -> float:
        """Riemannian distance d(t, x, y).

        Falls back to the one-point quadratic form sqrt((y-x)^T g(t,x) (y-x)),
        valid for small separations only (relative error O(|y-x|^2)).
        """
        if self.distance is not None:
            return float(self.distance(t, x, y))
        d = y - x
        return float(math.sqrt(max(d @ self.g(t, x) @ d, 0.0)))


@dataclass(frozen=True)
class VectorField:
    """Chart components of a time-dependent vector field Z(t, x)."""

    Z: Callable[[float, Array], Array]
    dZ_dx: Optional[Callable[[float, Array], Array]] = None  # [i,j] = dZ^i/dx_j
    dZ_dt: Optional[Callable[[float, Array], Array]] = None
    h_x: float = 1e-5
    h_t: float = 1e-6

    def eval(self, t: float, x: Array) -> Array:
        return np.asarray(self.Z(t, x), dtype=float)

    def jacobian(self, t: float, x: Array) -> Array:
        if self.dZ_dx is not None:
            return np.asarray(self.dZ_dx(t, x), dtype=float)
        n = len(x)
        h = self.h_x
        out = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            out[:, j] = (self.eval(t, x + e) - self.eval(t, x - e)) / (2 * h)
        return out

    def time_derivative(self, t: float, x: Array) -> Array:
        if self.dZ_dt is not None:
            return np.asarray(self.dZ_dt(t, x), dtype=float)
        h = self.h_t
        return (self.eval(t + h, x) - self.eval(t - h, x)) / (2 * h)


def zero_field(n: int) -> VectorField:
    z = np.zeros(n)
    jac = np.zeros((n, n))
    return VectorField(Z=lambda t, x: z, dZ_dx=lambda t, x: jac,
                       dZ_dt=lambda t, x: z)


def constant_field(mu) -> VectorField:
    mu = np.asarray(mu, dtype=float)
    n = len(mu)
    jac = np.zeros((n, n))
    return VectorField(Z=lambda t, x: mu, dZ_dx=lambda t, x: jac,
                       dZ_dt=lambda t, x: np.zeros(n))


@dataclass(frozen=True)
class CurvatureTensors:
    """Curvature data at a point, Cartan index order.

    ``riemann[i, k, l, j]`` is arranged so that the normal-coordinate
    expansion of the metric reads g_ij = delta_ij - (1/3) riemann[i,k,l,j]
    x_k x_l + O(|x|^3); with this convention the unit round sphere has
    scalar curvature n(n-1) > 0.
    """

    riemann: Array
    ricci: Array
    scalar: float
    christoffel: Array


# ---------------------------------------------------------------------------
# core operations


def metric_at(family: MetricFamily, t: float, x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    family.check_domain(t, x)
    g = np.asarray(family.g(t, x), dtype=float)
    try:
        np.linalg.cholesky(0.5 * (g + g.T))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            f"metric of '{family.name}' at (t={t}, x={x}) is not positive "
            f"definite") from None
    return g


def inverse_metric(family: MetricFamily, t: float, x: Array) -> Array:
    g = np.asarray(family.g(t, x), dtype=float)
    try:
        return np.linalg.inv(g)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric(str(exc)) from exc


def christoffel(family: MetricFamily, t: float, x: Array) -> Array:
    """Gamma^i_kl = 1/2 g^{im} (d_k g_ml + d_l g_mk - d_m g_kl)."""
    x = np.asarray(x, dtype=float)
    family.check_domain(t, x)
    ginv = inverse_metric(family, t, x)
    dg = family.eval_dg_dx(t, x)  # [k,i,j]
    # bracket[m,k,l] = d_k g_ml + d_l g_mk - d_m g_kl
    bracket = (np.einsum("kml->mkl", dg) + np.einsum("lmk->mkl", dg)
               - np.einsum("mkl->mkl", dg))
    return 0.5 * np.einsum("im,mkl->ikl", ginv, bracket)


def curvature(family: MetricFamily, t: float, x: Array) -> CurvatureTensors:
    """Riemann, Ricci and scalar curvature at (t, x).

    Derivatives of the Christoffel symbols are taken by central differences;
    the metric's own spatial derivatives may be analytic or numeric.
    """
    x = np.asarray(x, dtype=float)
    family.check_domain(t, x)
    n, h = family.dim, family.h_x
    gam = christoffel(family, t, x)
    dgam = np.empty((n, n, n, n))  # [c, m, a, b] = d_c Gamma^m_ab
    for c in range(n):
        e = np.zeros(n)
        e[c] = h
        # five-point stencil: O(h^4) truncation keeps curvature residuals
        # below the 1e-8 identities checked in the test suite
        dgam[c] = (christoffel(family, t, x - 2 * e)
                   - 8.0 * christoffel(family, t, x - e)
                   + 8.0 * christoffel(family, t, x + e)
                   - christoffel(family, t, x + 2 * e)) / (12 * h)
    # R^m_{jkl} = d_k Gamma^m_{lj} - d_l Gamma^m_{kj}
    #           + Gamma^m_{ks} Gamma^s_{lj} - Gamma^m_{ls} Gamma^s_{kj}
    rm = (np.einsum("kmlj->mjkl", dgam) - np.einsum("lmkj->mjkl", dgam)
          + np.einsum("mks,slj->mjkl", gam, gam)
          - np.einsum("mls,skj->mjkl", gam, gam))
    g = metric_at(family, t, x)
    lowered = np.einsum("ma,ajkl->mjkl", g, rm)  # R_{mjkl}
    # Cartan arrangement: riemann[i,k,l,j] = R_{kilj}
    riem = np.einsum("kilj->iklj", lowered)
    ginv = np.linalg.inv(g)
    ricci = np.einsum("kl,iklj->ij", ginv, riem)
    scalar = float(np.einsum("ij,ij->", ginv, ricci))
    return CurvatureTensors(riemann=riem, ricci=ricci, scalar=scalar, christoffel=gam)


def scalar_curvature(family: MetricFamily, t: float, x: Array) -> float:
    """Closed-form scalar curvature when the family supplies one."""
    if family.scalar_curvature is not None:
        return float(family.scalar_curvature(t, np.asarray(x, dtype=float)))
    return curvature(family, t, x).scalar


def gdot_sharp(family: MetricFamily, t: float, x: Array, v: Array) -> Array:
    """Raise the metric time-derivative: g^{-1}(t,x) gdot(t,x) v."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("tangent vector must be finite")
    ginv = inverse_metric(family, t, np.asarray(x, dtype=float))
    return ginv @ family.eval_dg_dt(t, np.asarray(x, dtype=float)) @ v


def trace_gdot(family: MetricFamily, t: float, x: Array) -> float:
    x = np.asarray(x, dtype=float)
    ginv = inverse_metric(family, t, x)
    return float(np.einsum("ij,ji->", ginv, family.eval_dg_dt(t, x)))


def divergence(family: MetricFamily, Z: VectorField, t: float, x: Array) -> float:
    """div_{g(t)} Z = dZ^i/dx_i + 1/2 Z^i tr(g^{-1} d_i g)."""
    x = np.asarray(x, dtype=float)
    family.check_domain(t, x)
    ginv = inverse_metric(family, t, x)
    dg = family.eval_dg_dx(t, x)
    dlogsqrt = 0.5 * np.einsum("ij,kji->k", ginv, dg)
    return float(np.trace(Z.jacobian(t, x)) + Z.eval(t, x) @ dlogsqrt)


def spd_sqrt(a: Array) -> Array:
    """Unique SPD square root via symmetric eigendecomposition.

    Eigenvalues are clamped at EIG_FLOOR before the square root.
    """
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    w = np.maximum(w, EIG_FLOOR)
    return (q * np.sqrt(w)) @ q.T


def orthonormal_frame(family: MetricFamily, t: float, x: Array) -> Array:
    """Columns form a g(t,x)-orthonormal basis (the SPD root of g^{-1})."""
    return spd_sqrt(inverse_metric(family, t, np.asarray(x, dtype=float)))


def gram(family: MetricFamily, t: float, x: Array, frame: Array) -> Array:
    """Gram matrix <frame_i, frame_j>_{g(t,x)}."""
    g = np.asarray(family.g(t, np.asarray(x, dtype=float)), dtype=float)
    return frame.T @ g @ frame


# ---------------------------------------------------------------------------
# built-in families


def euclidean(n: int, time_span=(0.0, 1.0)) -> MetricFamily:
    eye = np.eye(n)
    zero3 = np.zeros((n, n, n))
    zero4 = np.zeros((n, n, n, n))
    return MetricFamily(
        dim=n, time_span=time_span,
        chart_lo=np.full(n, -np.inf), chart_hi=np.full(n, np.inf),
        g=lambda t, x: eye,
        dg_dt=lambda t, x: np.zeros((n, n)),
        dg_dx=lambda t, x: zero3,
        d2g_dx=lambda t, x: zero4,
        distance=lambda t, x, y: float(np.linalg.norm(np.asarray(y) - np.asarray(x))),
        scalar_curvature=lambda t, x: 0.0,
        r_inj=lambda t: np.inf,
        sde_coefficients=lambda t, X: (np.zeros_like(X), np.ones_like(X)),
        name="euclidean",
    )


def conformal(n: int, lam: Callable[[float], float],
              lam_dot: Callable[[float], float],
              time_span=(0.0, 1.0)) -> MetricFamily:
    """g(t) = exp(2 lam(t)) * delta on R^n (spatially constant scaling)."""
    eye = np.eye(n)
    zero3 = np.zeros((n, n, n))
    zero4 = np.zeros((n, n, n, n))

    def g(t, x):
        return math.exp(2.0 * lam(t)) * eye

    def dg_dt(t, x):
        return 2.0 * lam_dot(t) * math.exp(2.0 * lam(t)) * eye

    def dist(t, x, y):
        return math.exp(lam(t)) * float(np.linalg.norm(np.asarray(y) - np.asarray(x)))

    def sde_coeffs(t, X):
        n_ = X.shape[-1]
        drift = np.zeros_like(X)
        sigma = math.exp(-lam(t)) * np.ones(X.shape[:-1] + (n_,))
        return drift, sigma

    return MetricFamily(
        dim=n, time_span=time_span,
        chart_lo=np.full(n, -np.inf), chart_hi=np.full(n, np.inf),
        g=g, dg_dt=dg_dt, dg_dx=lambda t, x: zero3, d2g_dx=lambda t, x: zero4,
        distance=dist, scalar_curvature=lambda t, x: 0.0,
        r_inj=lambda t: np.inf, sde_coefficients=sde_coeffs,
        name="conformal",
    )


def flat_torus(a0, rates, time_span=(0.0, 1.0)) -> MetricFamily:
    """Diagonal metric a_i(t) = a0_i * exp(rates_i * t) on a flat chart."""
    a0 = np.asarray(a0, dtype=float)
    rates = np.asarray(rates, dtype=float)
    n = len(a0)
    if np.any(a0 <= 0):
        raise ConfigError("torus coefficients must be positive")
    zero3 = np.zeros((n, n, n))
    zero4 = np.zeros((n, n, n, n))

    def coeffs(t):
        return a0 * np.exp(rates * t)

    def g(t, x):
        return np.diag(coeffs(t))

    def dg_dt(t, x):
        return np.diag(rates * coeffs(t))

    def dist(t, x, y):
        d = np.asarray(y) - np.asarray(x)
        return float(math.sqrt(np.sum(coeffs(t) * d * d)))

    def sde_coeffs(t, X):
        a = coeffs(t)
        drift = np.zeros_like(X)
        sigma = np.broadcast_to(1.0 / np.sqrt(a), X.shape).copy()
        return drift, sigma

    box = 4.0 * math.pi
    return MetricFamily(
        dim=n, time_span=time_span,
        chart_lo=np.full(n, -box), chart_hi=np.full(n, box),
        g=g, dg_dt=dg_dt, dg_dx=lambda t, x: zero3, d2g_dx=lambda t, x: zero4,
        distance=dist, scalar_curvature=lambda t, x: 0.0,
        r_inj=lambda t: np.inf, sde_coefficients=sde_coeffs,
        name="flat_torus",
    )


def sphere_ricci(n: int = 2, alpha: float = -2.0, c0: float = 1.0,
                 time_span=None) -> MetricFamily:
    """Round S^n in the stereographic chart evolving by dg/dt = alpha * Ric.

    Ric of the round metric is (n-1) * g_round, so the conformal factor obeys
    c(t) = c0 + alpha (n-1) t and g(t) = c(t) * g_round with
    g_round = 4 / (1 + |x|^2)^2 * delta.  Scalar curvature is n(n-1)/c(t).
    """
    if n not in (2, 3):
        raise ConfigError("sphere_ricci supports n in {2, 3}")
    cdot = alpha * (n - 1)
    if time_span is None:
        # keep c(t) >= c0/4 over the span
        t_max = 0.75 * c0 / abs(cdot) if cdot < 0 else 1.0
        time_span = (0.0, t_max)

    def c(t):
        return c0 + cdot * t

    eye = np.eye(n)

    def rho_round(x):
        r2 = float(np.dot(x, x))
        return 4.0 / (1.0 + r2) ** 2

    def g(t, x):
        return (c(t) * rho_round(x)) * eye

    def dg_dt(t, x):
        return (cdot * rho_round(x)) * eye

    def dg_dx(t, x):
        r2 = float(np.dot(x, x))
        grad = -16.0 * np.asarray(x) / (1.0 + r2) ** 3  # d rho_round / dx_k
        return c(t) * np.einsum("k,ij->kij", grad, eye)

    def d2g_dx(t, x):
        x = np.asarray(x, dtype=float)
        r2 = float(np.dot(x, x))
        hess = -16.0 * (np.eye(n) / (1.0 + r2) ** 3
                        - 6.0 * np.outer(x, x) / (1.0 + r2) ** 4)
        return c(t) * np.einsum("kl,ij->klij", hess, eye)

    def to_sphere(x):
        r2 = float(np.dot(x, x))
        return np.concatenate([2.0 * np.asarray(x), [1.0 - r2]]) / (1.0 + r2)

    def dist(t, x, y):
        p, q = to_sphere(np.asarray(x)), to_sphere(np.asarray(y))
        # half-chord form: accurate for nearby points where acos(p.q) loses
        # half the significant digits
        ang = 2.0 * math.asin(min(1.0, 0.5 * float(np.linalg.norm(p - q))))
        return math.sqrt(c(t)) * ang

    def scal(t, x):
        return n * (n - 1) / c(t)

    def sde_coeffs(t, X):
        r2 = np.sum(X * X, axis=-1, keepdims=True)
        rho = 4.0 * c(t) / (1.0 + r2) ** 2
        # drift^i = -1/2 g^{jk} Gamma^i_{jk} = (2-n)/rho * x_i/(1+r^2)
        drift = (2 - n) / rho * X / (1.0 + r2)
        sigma = np.broadcast_to(1.0 / np.sqrt(rho), X.shape).copy()
        return drift, sigma

    return MetricFamily(
        dim=n, time_span=tuple(time_span),
        chart_lo=np.full(n, -3.0), chart_hi=np.full(n, 3.0),
        g=g, dg_dt=dg_dt, dg_dx=dg_dx, d2g_dx=d2g_dx,
        distance=dist, scalar_curvature=scal,
        r_inj=lambda t: 0.9 * math.pi * math.sqrt(c(t)),
        sde_coefficients=sde_coeffs,
        name="sphere_ricci",
    )


def static_sphere(n: int = 2, c0: float = 1.0, time_span=(0.0, 1.0)) -> MetricFamily:
    """Round S^n with a frozen metric (alpha = 0)."""
    fam = sphere_ricci(n=n, alpha=0.0, c0=c0, time_span=time_span)
    object.__setattr__(fam, "name", "static_sphere")
    return fam


BUILTIN_FAMILIES = ("euclidean", "conformal", "flat_torus", "sphere_ricci")


def family_from_config(params: dict) -> MetricFamily:
    """Build a family from flat config parameters.

    Recognised keys: ``name`` plus, per family: ``n``; ``rate`` (conformal
    lambda(t) = rate * t); ``a0``/``rates`` (torus, comma-separated);
    ``alpha``/``c0`` (sphere); optional ``t_max``.
    """
    name = params.get("name")
    if name not in BUILTIN_FAMILIES:
        raise ConfigError(f"unknown family name: {name!r}")
    try:
        n = int(params.get("n", 1))
        t_max = float(params.get("t_max", 1.0))
        if name == "euclidean":
            return euclidean(n, time_span=(0.0, t_max))
        if name == "conformal":
            rate = float(params.get("rate", 0.0))
            return conformal(n, lam=lambda t: rate * t,
                             lam_dot=lambda t: rate, time_span=(0.0, t_max))
        if name == "flat_torus":
            a0 = [float(v) for v in str(params.get("a0", "1")).split(",")]
            rates = [float(v) for v in str(params.get("rates", "0")).split(",")]
            if len(rates) == 1:
                rates = rates * len(a0)
            return flat_torus(a0, rates, time_span=(0.0, t_max))
        alpha = float(params.get("alpha", -2.0))
        c0 = float(params.get("c0", 1.0))
        span = None if "t_max" not in params else (0.0, t_max)
        return sphere_ricci(n=int(params.get("n", 2)), alpha=alpha, c0=c0,
                            time_span=span)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad family parameters: {exc}") from exc
