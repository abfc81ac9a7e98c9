"""Conformal model geometries on a disk, geodesics, Jacobi fields.

The metric is ``g = exp(2 lambda(x)) (dx1^2 + dx2^2)`` on the disk of radius
``r_dom``.  Geodesics are integrated in velocity form

    x' = v,    v' = -2 (grad(lambda) . v) v + |v|^2 grad(lambda)

which is the cotangent Hamiltonian flow of ``H = exp(-2 lambda) |p|^2 / 2``
written with ``p = exp(2 lambda) v``.  All integration is fixed-step RK4 and
vectorized over batches of geodesics.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import NonUnitSpeed, OutOfRange, StepTooLarge, Trapped, ValidationError

SPEED_TOL = 1e-6
DRIFT_TOL = 1e-4
BISECT_TOL = 1e-10


@dataclass(frozen=True)
class MetricField:
    """Conformal factor ``lambda`` and its first and second derivatives.

    Each callable takes points of shape ``(..., 2)``; ``lam`` returns
    ``(...)``, ``grad_lambda`` returns ``(..., 2)`` and ``hess_lambda``
    returns ``(..., 2, 2)``.
    """

    lam: Callable[[np.ndarray], np.ndarray]
    grad_lambda: Callable[[np.ndarray], np.ndarray]
    hess_lambda: Callable[[np.ndarray], np.ndarray]
    r_dom: float = 1.0
    name: str = "custom"
    params: tuple = field(default=())

    @property
    def default_step(self) -> float:
        return 1e-3 * self.r_dom

    @property
    def t_max(self) -> float:
        return 100.0 * self.r_dom

    def speed(self, x, v):
        """Riemannian norm of ``v`` at ``x``."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.exp(self.lam(x)) * np.linalg.norm(v, axis=-1)

    def unit(self, x, direction):
        """Rescale a Euclidean direction to unit Riemannian speed."""
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return d * np.exp(-self.lam(np.asarray(x, dtype=float)))[..., None]

    def gauss_curvature(self, x):
        x = np.asarray(x, dtype=float)
        lap = np.trace(self.hess_lambda(x), axis1=-2, axis2=-1)
        return -np.exp(-2.0 * self.lam(x)) * lap

    def derivative_errors(self, points, step=1e-4):
        """Relative mismatch of the supplied derivatives vs central differences.

        Returns ``(grad_err, hess_err)``, each the largest error over
        ``points`` relative to the largest magnitude of the derivative there
        (floored at 1 to stay meaningful where derivatives vanish).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        e = np.eye(2) * step
        g_fd = np.stack(
            [(self.lam(pts + e[i]) - self.lam(pts - e[i])) / (2 * step) for i in range(2)],
            axis=-1,
        )
        h_fd = np.stack(
            [(self.grad_lambda(pts + e[i]) - self.grad_lambda(pts - e[i])) / (2 * step)
             for i in range(2)],
            axis=-1,
        )
        g = self.grad_lambda(pts)
        h = self.hess_lambda(pts)
        gs = max(1.0, np.max(np.abs(g)))
        hs = max(1.0, np.max(np.abs(h)))
        return np.max(np.abs(g - g_fd)) / gs, np.max(np.abs(h - h_fd)) / hs

    def without_focusing(self) -> "MetricField":
        """Flat metric on the same disk (reference geometry)."""
        return euclidean(self.r_dom)


def euclidean(r_dom: float = 1.0) -> MetricField:
    return MetricField(
        lam=lambda x: np.zeros(np.shape(x)[:-1]),
        grad_lambda=lambda x: np.zeros(np.shape(x)),
        hess_lambda=lambda x: np.zeros(np.shape(x) + (2,)),
        r_dom=r_dom,
        name="euclidean",
    )


def curvature1(r_dom: float = 2.0) -> MetricField:
    """Stereographic round sphere: ``exp(2 lambda) = 4 / (1 + |x|^2)^2``, K = 1.

    Geodesics through the origin are great circles of length ``4 arctan(r_dom)``
    inside the disk; other geodesics may be trapped when ``r_dom > 1``.
    """

    def lam(x):
        return np.log(2.0) - np.log1p(np.sum(x * x, axis=-1))

    def grad(x):
        return -2.0 * x / (1.0 + np.sum(x * x, axis=-1))[..., None]

    def hess(x):
        q = (1.0 + np.sum(x * x, axis=-1))[..., None, None]
        return -2.0 * np.eye(2) / q + 4.0 * x[..., :, None] * x[..., None, :] / q**2

    return MetricField(lam, grad, hess, r_dom=r_dom, name="curvature1")


def focusing(a: float = 0.8, sigma: float = 0.25, r_dom: float = 1.0) -> MetricField:
    """Gaussian lens ``lambda = a exp(-|x|^2 / (2 sigma^2))``."""
    s2 = sigma * sigma

    def lam(x):
        return a * np.exp(-np.sum(x * x, axis=-1) / (2.0 * s2))

    def grad(x):
        return -(lam(x) / s2)[..., None] * x

    def hess(x):
        l = lam(x)[..., None, None]
        return l * (x[..., :, None] * x[..., None, :] / (s2 * s2) - np.eye(2) / s2)

    return MetricField(lam, grad, hess, r_dom=r_dom, name="focusing", params=(a, sigma))


_PRESET_RE = re.compile(r"^\s*([a-z0-9_]+)\s*(?:\((.*)\))?\s*$")


def preset(spec: str) -> MetricField:
    """Build a metric from a name such as ``"focusing(0.8,0.25)"``."""
    m = _PRESET_RE.match(spec.lower())
    if not m:
        raise ValidationError(f"cannot parse metric preset {spec!r}")
    name, args = m.group(1), m.group(2)
    vals = [float(a) for a in args.split(",")] if args and args.strip() else []
    builders = {"euclidean": euclidean, "curvature1": curvature1, "focusing": focusing}
    if name not in builders:
        raise ValidationError(f"unknown metric preset {name!r}")
    try:
        return builders[name](*vals)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {name}: {vals}") from exc


# ---------------------------------------------------------------------------
# vector field and RK4

def _accel(metric, x, v):
    g = metric.grad_lambda(x)
    gv = np.sum(g * v, axis=-1)[..., None]
    vv = np.sum(v * v, axis=-1)[..., None]
    return -2.0 * gv * v + vv * g


def _rhs(metric, x, v, Y):
    """Time derivative of ``(x, v)`` and of the variation matrix ``Y`` (B, 4, m)."""
    g = metric.grad_lambda(x)
    gv = np.sum(g * v, axis=-1)
    vv = np.sum(v * v, axis=-1)
    a = -2.0 * gv[:, None] * v + vv[:, None] * g
    if Y is None:
        return v, a, None
    H = metric.hess_lambda(x)
    Hv = np.einsum("bij,bj->bi", H, v)
    I = np.eye(2)
    Fx = -2.0 * v[:, :, None] * Hv[:, None, :] + vv[:, None, None] * H
    Fv = (
        -2.0 * v[:, :, None] * g[:, None, :]
        - 2.0 * gv[:, None, None] * I
        + 2.0 * g[:, :, None] * v[:, None, :]
    )
    dx, dv = Y[:, :2, :], Y[:, 2:, :]
    dY = np.concatenate([dv, Fx @ dx + Fv @ dv], axis=1)
    return v, a, dY


def rk4_step(metric, x, v, Y, h):
    """One RK4 step for a batch; ``h`` is a scalar or an array of shape (B,)."""
    h = np.asarray(h, dtype=float)
    hb = h[..., None] if h.ndim else h
    hY = h[..., None, None] if h.ndim else h
    k1x, k1v, k1Y = _rhs(metric, x, v, Y)
    Y2 = None if Y is None else Y + 0.5 * hY * k1Y
    k2x, k2v, k2Y = _rhs(metric, x + 0.5 * hb * k1x, v + 0.5 * hb * k1v, Y2)
    Y3 = None if Y is None else Y + 0.5 * hY * k2Y
    k3x, k3v, k3Y = _rhs(metric, x + 0.5 * hb * k2x, v + 0.5 * hb * k2v, Y3)
    Y4 = None if Y is None else Y + hY * k3Y
    k4x, k4v, k4Y = _rhs(metric, x + hb * k3x, v + hb * k3v, Y4)
    xn = x + hb / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    vn = v + hb / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    Yn = None if Y is None else Y + hY / 6.0 * (k1Y + 2 * k2Y + 2 * k3Y + k4Y)
    return xn, vn, Yn


@dataclass
class Flow:
    """Result of a batched integration, sampled every ``record_every`` steps.

    Arrays are indexed ``[ray, sample]``; samples after a ray's exit are NaN.
    The exit state of each ray is stored separately in ``x_exit`` etc.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    Y: np.ndarray | None
    tau: np.ndarray
    x_exit: np.ndarray
    v_exit: np.ndarray
    Y_exit: np.ndarray | None
    h: float
    max_drift: float


def shoot(metric, x0, v0, h=None, Y0=None, record_every=1, t_max=None,
          allow_trapped=False, check_drift=True) -> Flow:
    """Integrate a batch of geodesics (and optional variations) until exit.

    Args:
        x0, v0: start points and velocities, shape (B, 2).
        h: RK4 step in time units.
        Y0: optional initial variation matrices, shape (B, 4, m).
        record_every: keep every k-th step in the returned samples.
        allow_trapped: return NaN exit data instead of raising ``Trapped``.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    v = np.array(v0, dtype=float, ndmin=2)
    h = metric.default_step if h is None else float(h)
    if h <= 0:
        raise ValidationError("step must be positive")
    t_max = metric.t_max if t_max is None else t_max
    Y = None if Y0 is None else np.array(Y0, dtype=float)
    B = x.shape[0]
    r = metric.r_dom
    r2 = r * r

    tau = np.full(B, np.nan)
    x_exit = np.full((B, 2), np.nan)
    v_exit = np.full((B, 2), np.nan)
    Y_exit = None if Y is None else np.full_like(Y, np.nan)

    active = np.ones(B, dtype=bool)
    # outward-pointing starts on the boundary exit immediately
    on_bd = np.sum(x * x, axis=1) >= r2 * (1 - 1e-14)
    out = on_bd & (np.sum(x * v, axis=1) >= 0)
    if np.any(out):
        tau[out] = 0.0
        x_exit[out], v_exit[out] = x[out], v[out]
        if Y is not None:
            Y_exit[out] = Y[out]
        active &= ~out

    ts, xs, vs, Ys = [0.0], [x.copy()], [v.copy()], [None if Y is None else Y.copy()]
    xs[0][~active] = np.nan
    max_drift = 0.0
    step = 0
    while np.any(active):
        if (step + 1) * h > t_max:
            if allow_trapped:
                break
            raise Trapped(f"{int(active.sum())} geodesic(s) did not exit before t_max={t_max}")
        idx = np.nonzero(active)[0]
        xa, va = x[idx], v[idx]
        Ya = None if Y is None else Y[idx]
        xn, vn, Yn = rk4_step(metric, xa, va, Ya, h)
        crossed = np.sum(xn * xn, axis=1) > r2
        if np.any(crossed):
            ci = idx[crossed]
            lo = np.zeros(ci.size)
            hi = np.full(ci.size, h)
            xc, vc = xa[crossed], va[crossed]
            Yc = None if Y is None else Ya[crossed]
            while np.max(hi - lo) > BISECT_TOL * 1e-2:
                mid = 0.5 * (lo + hi)
                xm, _, _ = rk4_step(metric, xc, vc, None, mid)
                outside = np.sum(xm * xm, axis=1) > r2
                hi = np.where(outside, mid, hi)
                lo = np.where(outside, lo, mid)
            s = 0.5 * (lo + hi)
            xe, ve, Ye = rk4_step(metric, xc, vc, Yc, s)
            tau[ci] = step * h + s
            x_exit[ci], v_exit[ci] = xe, ve
            if Y is not None:
                Y_exit[ci] = Ye
            active[ci] = False
        keep = ~crossed
        x[idx[keep]], v[idx[keep]] = xn[keep], vn[keep]
        if Y is not None:
            Y[idx[keep]] = Yn[keep]
        step += 1
        if step % record_every == 0:
            xr = x.copy()
            vr = v.copy()
            xr[~active] = np.nan
            vr[~active] = np.nan
            ts.append(step * h)
            xs.append(xr)
            vs.append(vr)
            if Y is not None:
                Yr = Y.copy()
                Yr[~active] = np.nan
                Ys.append(Yr)
            if check_drift and np.any(active):
                sp = metric.speed(xr[active], vr[active])
                max_drift = max(max_drift, float(np.max(np.abs(sp - 1.0))))
    if check_drift:
        done = np.isfinite(tau)
        if np.any(done):
            sp = metric.speed(x_exit[done], v_exit[done])
            max_drift = max(max_drift, float(np.max(np.abs(sp - 1.0))))
        if max_drift > DRIFT_TOL:
            raise StepTooLarge(f"speed drift {max_drift:.3e} exceeds {DRIFT_TOL}")
    return Flow(
        t=np.asarray(ts),
        x=np.stack(xs, axis=1),
        v=np.stack(vs, axis=1),
        Y=None if Y is None else np.stack(Ys, axis=1),
        tau=tau,
        x_exit=x_exit,
        v_exit=v_exit,
        Y_exit=Y_exit,
        h=h,
        max_drift=max_drift,
    )


# ---------------------------------------------------------------------------
# single geodesics

@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(2))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(2))


@dataclass(frozen=True)
class Geodesic:
    t: np.ndarray  # (n,)
    x: np.ndarray  # (n, 2)
    v: np.ndarray  # (n, 2)
    h: float
    exit_time: float
    metric: MetricField = field(repr=False)

    def state_at(self, t0):
        """Position and velocity at an arbitrary time (RK4 from the prior sample)."""
        if not (-1e-12 <= t0 <= self.exit_time + 1e-12):
            raise OutOfRange(f"t0={t0} outside [0, {self.exit_time}]")
        i = int(np.searchsorted(self.t, t0, side="right") - 1)
        i = min(max(i, 0), len(self.t) - 1)
        ds = t0 - self.t[i]
        if abs(ds) < 1e-15:
            return self.x[i].copy(), self.v[i].copy()
        xn, vn, _ = rk4_step(self.metric, self.x[i:i + 1], self.v[i:i + 1], None, ds)
        return xn[0], vn[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x1", "x2", "v1", "v2"])
            for t, x, v in zip(self.t, self.x, self.v):
                w.writerow([f"{t:.12g}", f"{x[0]:.12g}", f"{x[1]:.12g}",
                            f"{v[0]:.12g}", f"{v[1]:.12g}"])


def _check_start(metric, start):
    if np.linalg.norm(start.x) > metric.r_dom * (1 + 1e-12):
        raise ValidationError("start point lies outside the disk")
    sp = float(metric.speed(start.x, start.v))
    if abs(sp - 1.0) > SPEED_TOL:
        raise NonUnitSpeed(f"|v|_g = {sp:.9f}")


def integrate_geodesic(metric: MetricField, start: PhasePoint, h: float | None = None) -> Geodesic:
    """Unit-speed geodesic from ``start`` until it leaves the disk."""
    _check_start(metric, start)
    fl = shoot(metric, start.x[None], start.v[None], h)
    n = np.sum(np.isfinite(fl.x[0, :, 0]))
    t = np.append(fl.t[:n], fl.tau[0])
    x = np.vstack([fl.x[0, :n], fl.x_exit[0]])
    v = np.vstack([fl.v[0, :n], fl.v_exit[0]])
    if t[-1] - t[-2] < 1e-14:
        t, x, v = t[:-1], np.vstack([x[:-2], x[-1]]), np.vstack([v[:-2], v[-1]])
    return Geodesic(t=t, x=x, v=v, h=fl.h, exit_time=float(fl.tau[0]), metric=metric)


def boundary_start(metric: MetricField, beta: float, alpha: float) -> PhasePoint:
    """Inward unit vector at boundary angle ``beta``, rotated by ``alpha`` from the inner normal."""
    p = metric.r_dom * np.array([np.cos(beta), np.sin(beta)])
    d = np.array([-np.cos(beta + alpha), -np.sin(beta + alpha)])
    return PhasePoint(p, metric.unit(p, d))


# ---------------------------------------------------------------------------
# Jacobi fields

@dataclass(frozen=True)
class JacobiSolution:
    """Fundamental Jacobi matrix with ``J(t0) = 0``, ``J'(t0) = I``."""

    along: Geodesic = field(repr=False)
    t0: float
    t: np.ndarray  # (n,)
    J: np.ndarray  # (n, 2, 2)
    Jp: np.ndarray  # (n, 2, 2)

    def det(self):
        return np.linalg.det(self.J)


def _jacobi_branch(metric, x0, v0, h, sign):
    Y0 = np.zeros((1, 4, 2))
    Y0[0, 2:, :] = sign * np.eye(2)
    fl = shoot(metric, x0[None], sign * v0[None], h, Y0=Y0)
    n = int(np.sum(np.isfinite(fl.x[0, :, 0])))
    s = np.append(fl.t[:n], fl.tau[0])
    Y = np.concatenate([fl.Y[0, :n], fl.Y_exit[0][None]], axis=0)
    x = np.vstack([fl.x[0, :n], fl.x_exit[0]])
    v = np.vstack([fl.v[0, :n], fl.v_exit[0]])
    return s, Y, x, v


def jacobi_fields(metric: MetricField, g: Geodesic, t0: float) -> JacobiSolution:
    """Jacobi matrix along ``g`` based at ``t0``, integrated with step ``g.h``."""
    if not (-1e-12 <= t0 <= g.exit_time + 1e-12):
        raise OutOfRange(f"t0={t0} outside [0, {g.exit_time}]")
    x0, v0 = g.state_at(t0)
    sf, Yf, _, _ = _jacobi_branch(metric, x0, v0, g.h, +1.0)
    parts_t = [t0 + sf]
    parts_J = [Yf[:, :2, :]]
    parts_Jp = [Yf[:, 2:, :]]
    if t0 > 1e-12 and np.linalg.norm(x0) < metric.r_dom * (1 - 1e-12):
        sb, Yb, _, _ = _jacobi_branch(metric, x0, v0, g.h, -1.0)
        parts_t.insert(0, (t0 - sb[1:])[::-1])
        parts_J.insert(0, Yb[1:, :2, :][::-1])
        parts_Jp.insert(0, -Yb[1:, 2:, :][::-1])
    return JacobiSolution(
        along=g,
        t0=float(t0),
        t=np.concatenate(parts_t),
        J=np.concatenate(parts_J),
        Jp=np.concatenate(parts_Jp),
    )


class ConjugatePair(NamedTuple):
    t0: float
    t1: float
    degree: int
    x0: np.ndarray
    x1: np.ndarray


def kernel_degree(J, tol=1e-6):
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0:
        return J.shape[0]
    return int(np.sum(s <= tol * s[0]))


def _refine_crossing(metric, x, v, Y, h, sign_lo):
    lo, hi = 0.0, h
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        _, _, Ym = rk4_step(metric, x, v, Y, mid)
        if np.sign(np.linalg.det(Ym[0, :2, :])) == sign_lo:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    xm, vm, Ym = rk4_step(metric, x, v, Y, s)
    return s, xm[0], Ym[0, :2, :]


def conjugate_scan(metric: MetricField, g: Geodesic, tol: float = 1e-6,
                   t0s=None) -> list[ConjugatePair]:
    """Conjugate pairs ``(t0, t1)``, ``t1 > t0``, along ``g``.

    For each base time in ``t0s`` (default: the start of ``g``) the Jacobi
    matrix is integrated forward, sign changes of ``det J`` are bracketed on
    the step grid and refined by bisection on a partial RK4 step; the degree
    is the kernel dimension of ``J(t1)`` at threshold ``tol * sigma_max``.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    t0s = [0.0] if t0s is None else list(t0s)
    out = []
    for t0 in t0s:
        x0, v0 = g.state_at(t0)
        Y0 = np.zeros((1, 4, 2))
        Y0[0, 2:, :] = np.eye(2)
        fl = shoot(metric, x0[None], v0[None], g.h, Y0=Y0)
        n = int(np.sum(np.isfinite(fl.x[0, :, 0])))
        Ys = np.concatenate([fl.Y[0, :n], fl.Y_exit[0][None]], axis=0)
        xs = np.vstack([fl.x[0, :n], fl.x_exit[0]])
        vs = np.vstack([fl.v[0, :n], fl.v_exit[0]])
        ts = np.append(fl.t[:n], fl.tau[0])
        d = np.linalg.det(Ys[:, :2, :])
        for i in range(1, len(d) - 1):
            if d[i] == 0.0 or np.sign(d[i]) != np.sign(d[i + 1]):
                hstep = ts[i + 1] - ts[i]
                s, x1, J1 = _refine_crossing(
                    metric, xs[i:i + 1], vs[i:i + 1], Ys[i:i + 1], hstep, np.sign(d[i])
                )
                deg = kernel_degree(J1, tol)
                if deg >= 1:
                    out.append(ConjugatePair(float(t0), float(t0 + ts[i] + s), deg,
                                             x0.copy(), x1))
    return out
