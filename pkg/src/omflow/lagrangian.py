"""Onsager-Machlup Lagrangian, action functional, and weighted variants.

The Lagrangian for an inhomogeneous diffusion with generator
1/2 Laplace_{g(t)} + Z(t) splits into four terms:

    H(t, x, v) = 1/2 |Z - v|^2_{g(t)} + 1/2 div_{g(t)} Z
                 - R_{g(t)}/12 + 1/4 tr_{g(t)}(gdot)

The weighted variant (tube radius eps * f(t)) exists in two forms: the
formula as printed in the source material ("printed") and the one obtained
mechanically by applying the unweighted result to the time-changed diffusion
and changing variables back ("time_changed").  The two disagree; the
time-changed form is canonical here because it reduces to H exactly at
f == 1, which the printed form does not.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from . import geometry
from .errors import NonPositiveWeight
from .geometry import MetricFamily, VectorField
from .transport import Curve

Array = np.ndarray

DEFAULT_QUADRATURE_STEPS = 1000


@dataclass(frozen=True)
class LagrangianSample:
    """H evaluated at (t, x, v), with its four-term breakdown."""

    t: float
    kinetic: float
    div_term: float
    scalar_term: float
    trace_term: float

    @property
    def total(self) -> float:
        return self.kinetic + self.div_term + self.scalar_term + self.trace_term

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t,
            "kinetic": self.kinetic,
            "div_term": self.div_term,
            "scalar_term": self.scalar_term,
            "trace_term": self.trace_term,
            "total": self.total,
        })


@dataclass(frozen=True)
class WeightFunction:
    """Positive C^1 weight f(t) for the tube radius eps * f(t)."""

    f: Callable[[float], float]
    f_prime: Callable[[float], float]
    f_min: float = 1e-12

    def check(self, t: float) -> float:
        val = float(self.f(t))
        if val < self.f_min:
            raise NonPositiveWeight(f"f({t}) = {val} below floor {self.f_min}")
        return val


def unit_weight() -> WeightFunction:
    return WeightFunction(f=lambda t: 1.0, f_prime=lambda t: 0.0)


def exp_weight(rate: float) -> WeightFunction:
    return WeightFunction(f=lambda t: math.exp(rate * t),
                          f_prime=lambda t: rate * math.exp(rate * t))


def om_lagrangian(family: MetricFamily, Z: VectorField, t: float, x, v) -> LagrangianSample:
    """Four-term Onsager-Machlup Lagrangian at (t, x, v)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    family.check_domain(t, x)
    g = np.asarray(family.g(t, x), dtype=float)
    dv = Z.eval(t, x) - v
    kinetic = 0.5 * float(dv @ g @ dv)
    div_term = 0.5 * geometry.divergence(family, Z, t, x)
    scalar_term = -geometry.scalar_curvature(family, t, x) / 12.0
    trace_term = 0.25 * geometry.trace_gdot(family, t, x)
    return LagrangianSample(t=t, kinetic=kinetic, div_term=div_term,
                            scalar_term=scalar_term, trace_term=trace_term)


def simpson_weights(steps: int) -> tuple[Array, Array]:
    """Nodes in [0, 1] and weights of composite Simpson with `steps` intervals."""
    if steps < 2:
        raise ValueError("quadrature_steps must be >= 2")
    if steps % 2:
        steps += 1
    ts = np.linspace(0.0, 1.0, steps + 1)
    w = np.ones(steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= 1.0 / (3.0 * steps)
    return ts, w


def action(family: MetricFamily, Z: VectorField, curve: Curve,
           quadrature_steps: int = DEFAULT_QUADRATURE_STEPS) -> float:
    """Composite-Simpson integral of the Lagrangian along the curve."""
    ts, w = simpson_weights(quadrature_steps)
    total = 0.0
    for u, wi in zip(ts, w):
        t = u * curve.T
        total += wi * om_lagrangian(family, Z, t, curve.phi(t), curve.phi_dot(t)).total
    return total * curve.T


def time_change(weight: WeightFunction, T: float):
    """Return (delta, delta_inv) with delta_inv(t) = int_0^t f^{-2}(s) ds.

    delta inverts delta_inv by bracketed root finding, accurate to 1e-10.
    """
    weight.check(0.0)
    weight.check(T)

    def integrand(s):
        return 1.0 / weight.check(s) ** 2

    def delta_inv(t):
        val, _ = quad(integrand, 0.0, t, limit=200, epsabs=1e-14, epsrel=1e-13)
        return val

    S = delta_inv(T)

    def delta(u):
        if u <= 0.0:
            return 0.0
        if u >= S:
            return T
        return brentq(lambda t: delta_inv(t) - u, 0.0, T, xtol=1e-14, rtol=1e-15)

    return delta, delta_inv


def _time_changed_objects(family: MetricFamily, Z: VectorField,
                          weight: WeightFunction):
    """Family and drift of the time-changed diffusion, parametrised by the
    original time variable (the change of variables back is the final
    f^{-2}(t) factor applied by the caller)."""

    def f2(t):
        return weight.check(t) ** 2

    def g_hat(t, x):
        return np.asarray(family.g(t, x), dtype=float) / f2(t)

    def dg_hat(t, x):
        f = weight.check(t)
        fp = float(weight.f_prime(t))
        g = np.asarray(family.g(t, x), dtype=float)
        gd = family.eval_dg_dt(t, x)
        return (f * f) * ((1.0 / (f * f)) * gd - (2.0 * fp / f ** 3) * g)

    def dg_hat_dx(t, x):
        return family.eval_dg_dx(t, x) / f2(t)

    scal = None
    if family.scalar_curvature is not None:
        def scal(t, x):
            return f2(t) * family.scalar_curvature(t, x)

    fam_hat = MetricFamily(
        dim=family.dim, time_span=family.time_span,
        chart_lo=family.chart_lo, chart_hi=family.chart_hi,
        g=g_hat, dg_dt=dg_hat, dg_dx=dg_hat_dx,
        scalar_curvature=scal, h_x=family.h_x,
        name=family.name + "+time_changed",
    )

    def z_hat(t, x):
        return f2(t) * Z.eval(t, x)

    def dz_hat(t, x):
        return f2(t) * Z.jacobian(t, x)

    Z_hat = VectorField(Z=z_hat, dZ_dx=dz_hat)
    return fam_hat, Z_hat


def weighted_lagrangian(family: MetricFamily, Z: VectorField,
                        weight: WeightFunction, t: float, x, v,
                        variant: str = "time_changed") -> LagrangianSample:
    """Weighted-tube Lagrangian.

    ``printed`` evaluates the published formula verbatim; note its kinetic
    coefficient is 1 (not 1/2), so it does not reduce to the unweighted
    Lagrangian at f == 1.  ``time_changed`` applies the unweighted result to
    the time-changed diffusion and changes variables back; at f == 1 it
    reproduces ``om_lagrangian`` term by term.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f = weight.check(t)
    fp = float(weight.f_prime(t))
    n = family.dim
    if variant == "printed":
        g = np.asarray(family.g(t, x), dtype=float)
        dv = Z.eval(t, x) - v
        kinetic = float(dv @ g @ dv)  # coefficient 1, as printed
        div_term = 0.5 * geometry.divergence(family, Z, t, x)
        scalar_term = -geometry.scalar_curvature(family, t, x) / 12.0
        trace_term = (0.25 * geometry.trace_gdot(family, t, x) / (f * f)
                      - 0.5 * n * fp / f ** 3)
        return LagrangianSample(t=t, kinetic=kinetic, div_term=div_term,
                                scalar_term=scalar_term, trace_term=trace_term)
    if variant != "time_changed":
        raise ValueError(f"unknown variant {variant!r}")
    fam_hat, Z_hat = _time_changed_objects(family, Z, weight)
    scale = 1.0 / (f * f)
    sample = om_lagrangian(fam_hat, Z_hat, t, x, (f * f) * v)
    return LagrangianSample(t=t,
                            kinetic=scale * sample.kinetic,
                            div_term=scale * sample.div_term,
                            scalar_term=scale * sample.scalar_term,
                            trace_term=scale * sample.trace_term)


def weighted_action(family: MetricFamily, Z: VectorField,
                    weight: WeightFunction, curve: Curve,
                    quadrature_steps: int = DEFAULT_QUADRATURE_STEPS,
                    variant: str = "time_changed") -> float:
    ts, w = simpson_weights(quadrature_steps)
    total = 0.0
    for u, wi in zip(ts, w):
        t = u * curve.T
        total += wi * weighted_lagrangian(family, Z, weight, t, curve.phi(t),
                                          curve.phi_dot(t), variant=variant).total
    return total * curve.T
