"""Time-coupled parallel transport, exponential maps and normal coordinates.

The frame transport solves the first-order ODE

    d tau^i/dt = -Gamma^i_jk(t, phi(t)) phidot^j tau^k - 1/2 (g^{-1} gdot tau)^i

whose solution stays g(t)-orthonormal along the curve.  Normal coordinates
are obtained by Newton shooting on the initial velocity of the geodesic
integrator, and the quadratic (curvature) term of the metric expansion in
those coordinates doubles as a test oracle for the curvature pipeline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from . import geometry
from .errors import NoConvergence, NotOrthonormal, OutOfDomain, StepFailure
from .geometry import MetricFamily

Array = np.ndarray

ORTHONORMAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class Curve:
    """A C^2 path [0, T] -> chart with velocity access."""

    T: float
    phi: Callable[[float], Array]
    phi_dot: Callable[[float], Array]

    def phi_ddot(self, t: float, h: float = 1e-5) -> Array:
        h = min(h, 0.4 * self.T)
        lo, hi = t - h, t + h
        if lo < 0.0:
            lo, hi = 0.0, 2 * h
        elif hi > self.T:
            lo, hi = self.T - 2 * h, self.T
        return (self.phi_dot(hi) - self.phi_dot(lo)) / (hi - lo)

    def sample(self, m: int) -> tuple[Array, Array]:
        ts = np.linspace(0.0, self.T, m)
        xs = np.array([self.phi(t) for t in ts])
        return ts, xs


def curve_from_knots(T: float, points: Array) -> Curve:
    """Cubic interpolation of K+1 uniformly spaced knots (rows of points)."""
    points = np.asarray(points, dtype=float)
    ts = np.linspace(0.0, T, len(points))
    spline = CubicSpline(ts, points, axis=0)
    dspline = spline.derivative()
    return Curve(T=T, phi=lambda t: spline(t), phi_dot=lambda t: dspline(t))


def constant_curve(T: float, x) -> Curve:
    x = np.asarray(x, dtype=float)
    z = np.zeros_like(x)
    return Curve(T=T, phi=lambda t: x, phi_dot=lambda t: z)


def line_curve(T: float, x0, x1) -> Curve:
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    v = (x1 - x0) / T
    return Curve(T=T, phi=lambda t: x0 + t * v, phi_dot=lambda t: v)


def curve_from_csv(path) -> Curve:
    """Load a curve from CSV with header t, x_1, ..., x_n."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0].strip() != "t":
            raise ValueError(f"curve CSV must start with a 't' column: {path}")
        for row in reader:
            rows.append([float(v) for v in row])
    data = np.asarray(rows)
    ts, xs = data[:, 0], data[:, 1:]
    spline = CubicSpline(ts, xs, axis=0)
    dspline = spline.derivative()
    return Curve(T=float(ts[-1]), phi=lambda t: spline(t),
                 phi_dot=lambda t: dspline(t))


def curve_to_csv(curve: Curve, path, m: int = 201) -> None:
    ts, xs = curve.sample(m)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x_{i + 1}" for i in range(xs.shape[1])])
        for t, x in zip(ts, xs):
            writer.writerow([format(t, ".12g")] + [format(v, ".12g") for v in x])


# ---------------------------------------------------------------------------
# frame transport


@dataclass(frozen=True)
class FramePath:
    """Transported frame along a curve; columns of tau(t) are the basis."""

    t_grid: Array
    frames: Array  # (len(t_grid), n, n)

    def tau(self, t: float) -> Array:
        ts = self.t_grid
        if t <= ts[0]:
            return self.frames[0]
        if t >= ts[-1]:
            return self.frames[-1]
        i = int(np.searchsorted(ts, t) - 1)
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - w) * self.frames[i] + w * self.frames[i + 1]

    def to_csv(self, path) -> None:
        n = self.frames.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"tau_{i + 1}{j + 1}" for i in range(n)
                                     for j in range(n)])
            for t, f in zip(self.t_grid, self.frames):
                writer.writerow([format(t, ".12g")]
                                + [format(v, ".12g") for v in f.ravel()])


def _rk4(f, y0: Array, t0: float, t1: float, steps: int):
    """Classical fixed-step 4th-order integrator; returns (t_grid, states)."""
    h = (t1 - t0) / steps
    ts = t0 + h * np.arange(steps + 1)
    ys = np.empty((steps + 1,) + y0.shape)
    ys[0] = y0
    y = y0
    for i in range(steps):
        t = ts[i]
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise StepFailure(f"non-finite state at t={t + h}")
        ys[i + 1] = y
    return ts, ys


def parallel_transport(family: MetricFamily, curve: Curve, frame0: Array,
                       steps: int = 2000) -> FramePath:
    """Transport an initial g(0)-orthonormal frame along the curve."""
    frame0 = np.asarray(frame0, dtype=float)
    x0 = curve.phi(0.0)
    defect = np.max(np.abs(geometry.gram(family, 0.0, x0, frame0) - np.eye(family.dim)))
    if defect > ORTHONORMAL_TOL:
        raise NotOrthonormal(f"initial frame defect {defect:.3e} exceeds "
                             f"{ORTHONORMAL_TOL}")

    def rhs(t, U):
        x = curve.phi(t)
        family.check_domain(t, x)
        gam = geometry.christoffel(family, t, x)
        ginv = geometry.inverse_metric(family, t, x)
        m = ginv @ family.eval_dg_dt(t, x)
        v = curve.phi_dot(t)
        return -np.einsum("ijk,j,kc->ic", gam, v, U) - 0.5 * (m @ U)

    ts, frames = _rk4(rhs, frame0, 0.0, curve.T, steps)
    return FramePath(t_grid=ts, frames=frames)


def orthonormality_defect(family: MetricFamily, curve: Curve,
                          fp: FramePath) -> float:
    """Max over the grid of |<tau e_i, tau e_j>_{g(t)} - delta_ij|."""
    eye = np.eye(family.dim)
    worst = 0.0
    for t, f in zip(fp.t_grid, fp.frames):
        worst = max(worst, float(np.max(np.abs(
            geometry.gram(family, t, curve.phi(t), f) - eye))))
    return worst


# ---------------------------------------------------------------------------
# exponential map and normal coordinates


def exp_map(family: MetricFamily, t: float, x: Array, v: Array,
            steps: int = 500) -> Array:
    """Integrate the geodesic of g(t) from (x, v) to unit time."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    family.check_domain(t, x)
    speed = math.sqrt(max(float(v @ family.g(t, x) @ v), 0.0))
    if family.r_inj is not None and speed >= family.r_inj(t):
        raise OutOfDomain(f"|v|_g = {speed:.4g} >= injectivity radius "
                          f"{family.r_inj(t):.4g}")
    if speed == 0.0:
        return x.copy()
    n = family.dim

    def rhs(s, y):
        pos, vel = y[:n], y[n:]
        family.check_domain(t, pos)
        gam = geometry.christoffel(family, t, pos)
        return np.concatenate([vel, -np.einsum("ijk,j,k->i", gam, vel, vel)])

    _, ys = _rk4(rhs, np.concatenate([x, v]), 0.0, 1.0, steps)
    return ys[-1, :n]


def exp_map_path(family: MetricFamily, t: float, x: Array, v: Array,
                 steps: int = 500) -> tuple[Array, Array]:
    """Geodesic positions and velocities on the unit-time grid."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = family.dim

    def rhs(s, y):
        pos, vel = y[:n], y[n:]
        gam = geometry.christoffel(family, t, pos)
        return np.concatenate([vel, -np.einsum("ijk,j,k->i", gam, vel, vel)])

    _, ys = _rk4(rhs, np.concatenate([x, v]), 0.0, 1.0, steps)
    return ys[:, :n], ys[:, n:]


@dataclass(frozen=True)
class NormalCoordinateFrame:
    """Normal coordinates of g(t) around a center point.

    ``from_normal`` maps normal coordinates to chart points by shooting the
    geodesic with initial velocity frame @ w; ``to_normal`` inverts it by
    damped Newton iteration.
    """

    family: MetricFamily
    t: float
    center: Array
    frame: Array
    exp_steps: int = 48
    max_iter: int = 50
    tol: float = 1e-12

    def from_normal(self, w: Array) -> Array:
        w = np.asarray(w, dtype=float)
        return exp_map(self.family, self.t, self.center, self.frame @ w,
                       steps=self.exp_steps)

    def to_normal(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        w = np.linalg.solve(self.frame, x - self.center)
        res = self.from_normal(w) - x
        rnorm = float(np.linalg.norm(res))
        n = len(w)
        for _ in range(self.max_iter):
            if rnorm < self.tol:
                return w
            jac = np.empty((n, n))
            h = max(1e-7, 1e-7 * float(np.linalg.norm(w)))
            for j in range(n):
                e = np.zeros(n)
                e[j] = h
                jac[:, j] = (self.from_normal(w + e) - self.from_normal(w - e)) / (2 * h)
            step = np.linalg.solve(jac, res)
            # halve the step while the residual grows
            lam = 1.0
            for _ in range(30):
                w_new = w - lam * step
                res_new = self.from_normal(w_new) - x
                rnorm_new = float(np.linalg.norm(res_new))
                if rnorm_new < rnorm:
                    break
                lam *= 0.5
            w, res, rnorm = w_new, res_new, rnorm_new
        if rnorm < 1e-8:
            return w
        raise NoConvergence(f"normal-coordinate shooting stalled at "
                            f"residual {rnorm:.3e}")

    def pullback_metric(self, w: Array, fd_step: float = 1e-4) -> Array:
        """Metric components of g(t) in these normal coordinates at w."""
        w = np.asarray(w, dtype=float)
        n = len(w)
        jac = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = fd_step
            # O(h^4) stencil: the Cartan remainder fit needs the pullback
            # accurate to ~1e-11 at radius 5e-3
            jac[:, j] = (self.from_normal(w - 2 * e)
                         - 8.0 * self.from_normal(w - e)
                         + 8.0 * self.from_normal(w + e)
                         - self.from_normal(w + 2 * e)) / (12 * fd_step)
        x = self.from_normal(w)
        g = np.asarray(self.family.g(self.t, x), dtype=float)
        return jac.T @ g @ jac

    def pullback_inverse_metric(self, w: Array, fd_step: float = 1e-4) -> Array:
        return np.linalg.inv(self.pullback_metric(w, fd_step=fd_step))


def normal_frame(family: MetricFamily, t: float, center: Array,
                 frame: Optional[Array] = None,
                 exp_steps: int = 48) -> NormalCoordinateFrame:
    center = np.asarray(center, dtype=float)
    family.check_domain(t, center)
    if frame is None:
        frame = geometry.orthonormal_frame(family, t, center)
    else:
        frame = np.asarray(frame, dtype=float)
        defect = np.max(np.abs(geometry.gram(family, t, center, frame)
                               - np.eye(family.dim)))
        if defect > ORTHONORMAL_TOL:
            raise NotOrthonormal(f"frame defect {defect:.3e}")
    return NormalCoordinateFrame(family=family, t=t, center=center,
                                 frame=frame, exp_steps=exp_steps)


# ---------------------------------------------------------------------------
# normal-coordinate oracles


@dataclass(frozen=True)
class CartanReport:
    """Residuals of the quadratic metric expansion in normal coordinates."""

    radii: tuple
    max_deviation: float          # fitted quadratic vs -(1/3) Riemann, largest radius
    deviations: tuple             # one per radius
    remainders: tuple             # max pointwise remainder per radius
    remainder_order: float        # log2(rem[0] / rem[1]) for halved radius


def _quadratic_coefficient(ncf: NormalCoordinateFrame, rho: float) -> Array:
    """Fit C[i,j,k,l] with g_ij(x) ~ delta_ij + C[i,j,k,l] x_k x_l."""
    n = len(ncf.center)
    eye = np.eye(n)

    def h(w):
        return ncf.pullback_metric(w) - eye

    C = np.zeros((n, n, n, n))
    diag = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = rho
        ck = (h(e) + h(-e)) / (2 * rho * rho)
        C[:, :, k, k] = ck
        diag.append(ck)
    for k in range(n):
        for l in range(k + 1, n):
            u = np.zeros(n)
            u[k] = u[l] = rho / math.sqrt(2.0)
            s2 = rho * rho / 2.0
            hkl = (h(u) + h(-u)) / 2.0
            ckl = (hkl - s2 * (diag[k] + diag[l])) / (2.0 * s2)
            C[:, :, k, l] = ckl
            C[:, :, l, k] = ckl
    return C


def cartan_expansion_check(family: MetricFamily, t: float, center: Array,
                           radii=(1e-2, 5e-3), n_dirs: int = 8,
                           seed: int = 7) -> CartanReport:
    """Compare the quadratic metric term in normal coordinates to curvature.

    The expected coefficient is -(1/3) R[i,k,l,j] expressed in the normal
    frame and symmetrised in (k, l); the pointwise remainder against that
    quadratic model should shrink at third order in the radius.
    """
    center = np.asarray(center, dtype=float)
    n = family.dim
    ncf = normal_frame(family, t, center)
    ct = geometry.curvature(family, t, center)
    F = ncf.frame
    r_frame = np.einsum("abcd,ai,bk,cl,dj->iklj", ct.riemann, F, F, F, F)
    expected = -(np.einsum("iklj->ijkl", r_frame)
                 + np.einsum("ilkj->ijkl", r_frame)) / 6.0  # sym in (k,l)

    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_dirs, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    eye = np.eye(n)

    deviations, remainders = [], []
    for rho in radii:
        C = _quadratic_coefficient(ncf, rho)
        deviations.append(float(np.max(np.abs(C - expected))))
        worst = 0.0
        for u in dirs:
            w = rho * u
            h = ncf.pullback_metric(w) - eye
            pred = np.einsum("ijkl,k,l->ij", expected, w, w)
            worst = max(worst, float(np.max(np.abs(h - pred))))
        remainders.append(worst)
    if len(radii) >= 2 and remainders[1] > 0:
        order = math.log(remainders[0] / remainders[1]) / math.log(radii[0] / radii[1])
    else:
        order = math.inf
    return CartanReport(radii=tuple(radii), max_deviation=deviations[0],
                        deviations=tuple(deviations),
                        remainders=tuple(remainders), remainder_order=order)


def hara_drift(family: MetricFamily, ncf: NormalCoordinateFrame,
               x_normal: Array, fd_step: float = 1e-4) -> Array:
    """gamma^i = 1/2 sum_j d g^{ij}/dx_j of the normal-coordinate metric."""
    x_normal = np.asarray(x_normal, dtype=float)
    n = len(x_normal)
    gamma = np.zeros(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = fd_step
        dginv = (ncf.pullback_inverse_metric(x_normal + e)
                 - ncf.pullback_inverse_metric(x_normal - e)) / (2 * fd_step)
        gamma += 0.5 * dginv[:, j]
    return gamma
