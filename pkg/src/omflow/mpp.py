"""Most probable paths: Euler-Lagrange residuals, shooting BVP, direct minimization.

The Euler-Lagrange equation of the action  int_0^T H(t, phi, phi') dt  is
written here in residual form

    res_k = g_kj a^j + C_k(t, x, v)

where a = phi'' and C collects everything that does not involve the
acceleration.  With S = 1/2 div Z - R/12 + 1/4 tr(gdot),

    C_k = -(gdot_kj + dg_kj/dx_l v^l)(Z - v)^j
          - g_kj (dZ^j/dt + dZ^j/dx_l v^l)
          - 1/2 dg_ij/dx_k (Z - v)^i (Z - v)^j
          - g_ij dZ^i/dx_k (Z - v)^j
          - dS/dx_k

For Z = 0 this reduces to the geodesic-type equation
nabla_{phi'} phi' + gdot^# phi' + grad(R/12 - 1/4 tr gdot) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from . import geometry, lagrangian
from .errors import (NoConvergence, NotPositiveDefinite, OutOfDomain,
                     StepFailure)
from .geometry import MetricFamily, VectorField
from .transport import Curve, curve_from_knots

Array = np.ndarray

BVP_TOL = 1e-8
BVP_MAX_ITER = 50


@dataclass(frozen=True)
class ELResidualReport:
    t_grid: Array
    residuals: Array          # (len(t_grid), n), index raised with g^{-1}
    max_norm: float
    l2_norm: float


@dataclass(frozen=True)
class BVPSolution:
    curve: Curve
    action: float
    initial_velocity: Array
    endpoint_error: float
    newton_iterations: int
    converged: bool


def _source_gradient(family: MetricFamily, Z: VectorField, t: float, x: Array,
                     h: Optional[float] = None) -> Array:
    """Central-difference gradient of S = 1/2 div Z - R/12 + 1/4 tr gdot."""
    n = family.dim
    if h is None:
        h = family.h_x * 10.0

    def S(y):
        return (0.5 * geometry.divergence(family, Z, t, y)
                - geometry.scalar_curvature(family, t, y) / 12.0
                + 0.25 * geometry.trace_gdot(family, t, y))

    grad = np.empty(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        grad[k] = (S(x + e) - S(x - e)) / (2.0 * h)
    return grad


def el_acceleration(family: MetricFamily, Z: VectorField, t: float,
                    x: Array, v: Array) -> Array:
    """phi'' demanded by the Euler-Lagrange equation: a = -g^{-1} C."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    g = geometry.metric_at(family, t, x)
    ginv = np.linalg.inv(g)
    gdot = family.eval_dg_dt(t, x)
    dgdx = family.eval_dg_dx(t, x)          # [k, i, j]
    z = Z.eval(t, x)
    dz = Z.jacobian(t, x)                    # [i, j] = dZ^i/dx_j
    zt = Z.time_derivative(t, x)
    w = z - v

    C = -(gdot + np.einsum('lkj,l->kj', dgdx, v)) @ w
    C -= g @ (zt + dz @ v)
    C -= 0.5 * np.einsum('kij,i,j->k', dgdx, w, w)
    C -= np.einsum('ij,ik,j->k', g, dz, w)
    C -= _source_gradient(family, Z, t, x)
    return -ginv @ C


def el_residual(family: MetricFamily, Z: VectorField, curve: Curve,
                n_grid: int = 200) -> ELResidualReport:
    """Euler-Lagrange residual (index raised) along the curve on a uniform grid.

    Endpoints are excluded because phi'' from spline data is one-sided there.
    """
    t_grid = np.linspace(0.0, curve.T, n_grid + 2)[1:-1]
    res = np.empty((len(t_grid), family.dim))
    for i, t in enumerate(t_grid):
        x = curve.phi(t)
        v = curve.phi_dot(t)
        a = curve.phi_ddot(t)
        res[i] = a - el_acceleration(family, Z, t, x, v)
    norms = np.linalg.norm(res, axis=1)
    l2 = float(np.sqrt(np.trapezoid(norms ** 2, t_grid)))
    return ELResidualReport(t_grid=t_grid, residuals=res,
                            max_norm=float(norms.max()), l2_norm=l2)


def _shoot(family: MetricFamily, Z: VectorField, T: float, x0: Array,
           v0: Array, steps: int) -> tuple[Array, Array, Array]:
    """RK4-integrate the EL system from (x0, v0); returns (t_grid, xs, vs)."""
    n = len(x0)
    dt = T / steps
    t_grid = np.linspace(0.0, T, steps + 1)
    xs = np.empty((steps + 1, n))
    vs = np.empty((steps + 1, n))
    xs[0], vs[0] = x0, v0

    def rhs(t, x, v):
        return v, el_acceleration(family, Z, t, x, v)

    x, v = x0.copy(), v0.copy()
    for i in range(steps):
        t = t_grid[i]
        k1x, k1v = rhs(t, x, v)
        k2x, k2v = rhs(t + dt / 2, x + dt / 2 * k1x, v + dt / 2 * k1v)
        k3x, k3v = rhs(t + dt / 2, x + dt / 2 * k2x, v + dt / 2 * k2v)
        k4x, k4v = rhs(t + dt, x + dt * k3x, v + dt * k3v)
        x = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise StepFailure(f"shooting blew up at t={t_grid[i + 1]:.4g}")
        xs[i + 1], vs[i + 1] = x, v
    return t_grid, xs, vs


def _curve_from_grid(T: float, t_grid: Array, xs: Array) -> Curve:
    return curve_from_knots(T, xs)


def solve_mpp_bvp(family: MetricFamily, Z: VectorField, T: float, x0, x1,
                  steps: int = 400, tol: float = BVP_TOL,
                  max_iter: int = BVP_MAX_ITER,
                  initial_velocities=None) -> BVPSolution:
    """Two-point BVP for the Euler-Lagrange equation by Newton shooting.

    Tries several initial velocity guesses (straight-line chord by default,
    plus scaled variants); among converged runs returns the one with the
    smallest action.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    family.check_domain(family.time_span[0], x0)
    family.check_domain(family.time_span[0] + T, x1)
    n = family.dim
    chord = (x1 - x0) / T
    if initial_velocities is None:
        initial_velocities = [chord, 0.5 * chord, 1.5 * chord]

    best: Optional[BVPSolution] = None
    for v_guess in initial_velocities:
        v0 = np.asarray(v_guess, dtype=float).copy()
        sol = _newton_shoot(family, Z, T, x0, x1, v0, steps, tol, max_iter)
        if sol is None:
            continue
        if best is None or (sol.converged and not best.converged) \
                or (sol.converged == best.converged and sol.action < best.action):
            best = sol
    if best is None or not best.converged:
        if best is not None:
            return best
        raise NoConvergence("shooting failed from every initial guess")
    return best


def _newton_shoot(family, Z, T, x0, x1, v0, steps, tol, max_iter):
    n = len(x0)
    scale = max(1.0, float(np.linalg.norm(x1 - x0) / T))
    it = 0
    try:
        t_grid, xs, vs = _shoot(family, Z, T, x0, v0, steps)
    except (StepFailure, OutOfDomain, NotPositiveDefinite):
        return None
    err = xs[-1] - x1
    while np.linalg.norm(err) > tol and it < max_iter:
        it += 1
        # finite-difference Jacobian of the endpoint map in v0
        J = np.empty((n, n))
        h = 1e-6 * scale
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            try:
                _, xs_p, _ = _shoot(family, Z, T, x0, v0 + e, steps)
                _, xs_m, _ = _shoot(family, Z, T, x0, v0 - e, steps)
            except (StepFailure, OutOfDomain, NotPositiveDefinite):
                return None
            J[:, k] = (xs_p[-1] - xs_m[-1]) / (2.0 * h)
        try:
            dv = np.linalg.solve(J, -err)
        except np.linalg.LinAlgError:
            return None
        # backtracking on the endpoint error
        lam = 1.0
        base = np.linalg.norm(err)
        for _ in range(30):
            try:
                t_grid, xs_new, vs_new = _shoot(family, Z, T, x0, v0 + lam * dv, steps)
            except (StepFailure, OutOfDomain, NotPositiveDefinite):
                lam *= 0.5
                continue
            if np.linalg.norm(xs_new[-1] - x1) < base:
                break
            lam *= 0.5
        else:
            break
        v0 = v0 + lam * dv
        xs, vs = xs_new, vs_new
        err = xs[-1] - x1
    curve = _curve_from_grid(T, t_grid, xs)
    act = lagrangian.action(family, Z, curve)
    return BVPSolution(curve=curve, action=act, initial_velocity=v0,
                       endpoint_error=float(np.linalg.norm(err)),
                       newton_iterations=it,
                       converged=bool(np.linalg.norm(err) <= tol))


@dataclass(frozen=True)
class DirectResult:
    curve: Curve
    action: float
    iterations: int
    converged: bool
    grad_norm: float


def minimize_action_direct(family: MetricFamily, Z: VectorField, T: float,
                           x0, x1, n_knots: int = 200,
                           quadrature_steps: Optional[int] = None,
                           max_iter: int = 500, gtol: float = 1e-7,
                           method: str = "l-bfgs",
                           initial_knots: Optional[Array] = None) -> DirectResult:
    """Direct minimization of the discretized action over interior knots.

    The curve is a cubic spline through n_knots+1 uniform knots with pinned
    endpoints; the objective is a composite-Simpson sum of the Lagrangian.
    The spline is linear in the knot values, so the gradient is exact in
    spline space: cardinal basis matrices B, Bdot at the quadrature nodes
    chain through dH/dx (central differences) and dH/dv = -g(Z - v)
    (analytic).  ``method`` is "l-bfgs" (default) or "gd" (plain gradient
    descent with backtracking, slower).
    """
    from scipy.interpolate import CubicSpline

    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    family.check_domain(family.time_span[0], x0)
    family.check_domain(family.time_span[0] + T, x1)
    n = family.dim
    K = n_knots
    if quadrature_steps is None:
        quadrature_steps = 2 * K
    t_knots = np.linspace(0.0, T, K + 1)
    if initial_knots is None:
        interior = np.array([x0 + (x1 - x0) * (i / K) for i in range(1, K)])
    else:
        interior = np.asarray(initial_knots, dtype=float).copy()

    tq, wq = lagrangian.simpson_weights(quadrature_steps)
    tq = tq * T
    wq = wq * T

    basis = CubicSpline(t_knots, np.eye(K + 1), axis=0)
    B = basis(tq)                    # (nq, K+1)
    Bdot = basis.derivative()(tq)

    # the kinetic block of the Hessian is close to the spline stiffness
    # matrix int B_i' B_j'; preconditioning with its Cholesky factor keeps
    # the iteration count roughly independent of K
    from scipy.linalg import cho_factor, solve_triangular
    stiff = Bdot[:, 1:K].T @ (wq[:, None] * Bdot[:, 1:K])
    stiff += 1e-10 * np.eye(K - 1)
    R = np.linalg.cholesky(stiff).T   # stiff = R^T R

    def to_y(P_int):
        return (R @ P_int).reshape(-1)

    def from_y(y):
        return solve_triangular(R, y.reshape(K - 1, n), lower=False)

    def points(flat):
        return np.vstack([x0, flat.reshape(K - 1, n), x1])

    def build_curve(flat):
        return curve_from_knots(T, points(flat))

    h = family.h_x * 10.0

    def objective_and_grad(flat):
        P = points(flat)
        xs = B @ P                   # (nq, n)
        vs = Bdot @ P
        vals = np.empty(len(tq))
        dHdx = np.empty((len(tq), n))
        dHdv = np.empty((len(tq), n))
        for i, t in enumerate(tq):
            x, v = xs[i], vs[i]
            vals[i] = lagrangian.om_lagrangian(family, Z, t, x, v).total
            g = geometry.metric_at(family, t, x)
            dHdv[i] = -g @ (Z.eval(t, x) - v)
            for d in range(n):
                e = np.zeros(n)
                e[d] = h
                lp = lagrangian.om_lagrangian(family, Z, t, x + e, v).total
                lm = lagrangian.om_lagrangian(family, Z, t, x - e, v).total
                dHdx[i, d] = (lp - lm) / (2.0 * h)
        f0 = float(wq @ vals)
        # chain rule: only interior knots (columns 1..K-1 of the basis) vary
        G = (B[:, 1:K].T @ (wq[:, None] * dHdx)
             + Bdot[:, 1:K].T @ (wq[:, None] * dHdv))
        return f0, G.reshape(-1)

    def obj_y(y):
        flat = from_y(y).reshape(-1)
        f0, g = objective_and_grad(flat)
        gy = solve_triangular(R, g.reshape(K - 1, n), lower=False, trans='T')
        return f0, gy.reshape(-1)

    y0 = to_y(interior)
    if method == "l-bfgs":
        res = minimize(obj_y, y0, jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "gtol": gtol,
                                "ftol": 1e-15, "maxcor": 20})
        y, its = res.x, res.nit
        gnorm = float(np.linalg.norm(res.jac, np.inf))
        ok = bool(res.success or gnorm < 10 * gtol)
    elif method == "gd":
        y = y0.copy()
        step = 0.1
        f0, g = obj_y(y)
        its = 0
        for its in range(1, max_iter + 1):
            if np.linalg.norm(g, np.inf) < gtol:
                break
            while step > 1e-14:
                trial = y - step * g
                f1, g1 = obj_y(trial)
                if f1 < f0:
                    y, f0, g = trial, f1, g1
                    step *= 1.5
                    break
                step *= 0.5
            else:
                break
        gnorm = float(np.linalg.norm(g, np.inf))
        ok = gnorm < 10 * gtol
    else:
        raise ValueError(f"unknown method {method!r}")

    flat = from_y(y).reshape(-1)
    curve = build_curve(flat)
    act = lagrangian.action(family, Z, curve)
    return DirectResult(curve=curve, action=act, iterations=int(its),
                        converged=ok, grad_norm=gnorm)
