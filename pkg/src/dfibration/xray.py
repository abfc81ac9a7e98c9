"""Geodesic X-ray double fibration on a conformal disk.

``G`` is the set of inward boundary data ``z = (beta, alpha)``: the geodesic
``gamma_z`` starts at ``r_dom (cos beta, sin beta)`` with unit direction
``-(cos(beta + alpha), sin(beta + alpha))``.  ``Z`` pairs ``z`` with the
points of ``gamma_z``.  The ``phi`` chart at ``(z0, x0)`` uses the tubular
frame of ``gamma_z0`` at ``x0``: ``x'`` runs along the tangent, ``x''`` along
the normal, and ``phi(z, x')`` is the normal offset at which ``gamma_z``
crosses the transverse line ``{x' = const}``.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .charts import BChart, PhiChart
from .errors import ChartDomain, NotIncident, ValidationError
from .fibration import FibrationSpec

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-13
PREFETCH_CHUNK = 256


def _rot(u):
    """Rotate vectors by +90 degrees."""
    return np.stack([-u[..., 1], u[..., 0]], axis=-1)


def initial_data(metric: geo.MetricField, zs):
    """Start points, unit velocities and their ``z``-variations, batched.

    Returns ``x0 (B, 2)``, ``v0 (B, 2)``, ``Y0 (B, 4, 2)`` where the columns
    of ``Y0`` are the derivatives of ``(x0, v0)`` in ``beta`` and ``alpha``.
    """
    zs = np.atleast_2d(np.asarray(zs, float))
    beta, alpha = zs[:, 0], zs[:, 1]
    r = metric.r_dom
    p = r * np.stack([np.cos(beta), np.sin(beta)], axis=1)
    dp = r * np.stack([-np.sin(beta), np.cos(beta)], axis=1)
    d = -np.stack([np.cos(beta + alpha), np.sin(beta + alpha)], axis=1)
    dd = np.stack([np.sin(beta + alpha), -np.cos(beta + alpha)], axis=1)
    el = np.exp(-metric.lam(p))[:, None]
    v0 = el * d
    gl = np.sum(metric.grad_lambda(p) * dp, axis=1)[:, None]
    Y0 = np.zeros((zs.shape[0], 4, 2))
    Y0[:, :2, 0] = dp
    Y0[:, 2:, 0] = el * dd - gl * v0
    Y0[:, 2:, 1] = el * dd
    return p, v0, Y0


@dataclass(frozen=True)
class GeodesicPath:
    """A geodesic ``gamma_z`` with its ``z``-variation, sampled every step."""

    z: np.ndarray
    t: np.ndarray  # (K,)
    x: np.ndarray  # (K, 2)
    v: np.ndarray  # (K, 2)
    Y: np.ndarray  # (K, 4, 2)
    tau: float
    h: float
    metric: geo.MetricField

    def state(self, t):
        """``(x, v, Y)`` at time ``t`` by a partial RK4 step from the previous sample."""
        i = int(np.clip(np.floor(t / self.h), 0, len(self.t) - 2))
        ds = t - self.t[i]
        if ds == 0.0:
            return self.x[i], self.v[i], self.Y[i]
        x, v, Y = geo.rk4_step(self.metric, self.x[i][None], self.v[i][None],
                               self.Y[i][None], ds)
        return x[0], v[0], Y[0]

    def normal_rows(self):
        """Normal components ``e_N^T d gamma / dz`` at every sample, shape (K, 2)."""
        eN = _rot(self.v / np.linalg.norm(self.v, axis=1, keepdims=True))
        return np.einsum("ki,kij->kj", eN, self.Y[:, :2, :])


def _path_from_flow(metric, z, fl, b):
    n = int(np.sum(np.isfinite(fl.x[b, :, 0])))
    t = np.append(fl.t[:n], fl.tau[b])
    x = np.vstack([fl.x[b, :n], fl.x_exit[b]])
    v = np.vstack([fl.v[b, :n], fl.v_exit[b]])
    Y = np.concatenate([fl.Y[b, :n], fl.Y_exit[b][None]], axis=0)
    if t[-1] - t[-2] < 1e-14:
        t, x, v, Y = np.delete(t, -2), np.delete(x, -2, 0), np.delete(v, -2, 0), np.delete(Y, -2, 0)
    return GeodesicPath(np.array(z, float), t, x, v, Y, float(fl.tau[b]), fl.h, metric)


class GeodesicXRay(FibrationSpec):
    """Geodesic X-ray fibration of a :class:`~dfibration.geometry.MetricField`."""

    name = "xray"
    has_curves = True

    def __init__(self, metric: geo.MetricField, h: float | None = None,
                 cache_size: int = 256, rank_rtol: float = 1e-6):
        super().__init__(2, 2, 1, rank_rtol)
        self.metric = metric
        self.h = metric.default_step if h is None else float(h)
        if self.h <= 0:
            raise ValidationError("step must be positive")
        self.r_dom = metric.r_dom
        self._cache: OrderedDict[bytes, GeodesicPath] = OrderedDict()
        self._cache_size = cache_size

    def describe(self):
        return {**super().describe(), "metric": self.metric.name,
                "metric_params": list(self.metric.params), "h": self.h}

    # -- geodesic cache
    @staticmethod
    def _key(z):
        return np.asarray(z, dtype=float).reshape(2).tobytes()

    def _store(self, key, path):
        self._cache[key] = path
        self._cache.move_to_end(key)
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)

    def path(self, z) -> GeodesicPath:
        key = self._key(z)
        p = self._cache.get(key)
        if p is None:
            self.prefetch([z])
            p = self._cache[key]
        else:
            self._cache.move_to_end(key)
        return p

    def prefetch(self, zs):
        """Integrate (batched) the geodesics of all ``zs`` not yet cached."""
        zs = np.atleast_2d(np.asarray(zs, float))
        todo = []
        seen = set()
        for z in zs:
            k = self._key(z)
            if k not in self._cache and k not in seen:
                seen.add(k)
                todo.append(z)
        for i in range(0, len(todo), PREFETCH_CHUNK):
            chunk = np.array(todo[i:i + PREFETCH_CHUNK])
            x0, v0, Y0 = initial_data(self.metric, chunk)
            fl = geo.shoot(self.metric, x0, v0, self.h, Y0=Y0)
            for b, z in enumerate(chunk):
                self._store(self._key(z), _path_from_flow(self.metric, z, fl, b))

    # -- incidence
    def locate(self, z, x):
        """Time ``t`` of the point of ``gamma_z`` closest to ``x``, and the distance."""
        p = self.path(z)
        x = np.asarray(x, float)
        i = int(np.argmin(np.sum((p.x - x) ** 2, axis=1)))
        t = float(p.t[i])
        for _ in range(30):
            xt, vt, _ = p.state(t)
            g = vt @ (xt - x)
            dt = -g / (vt @ vt)
            t = float(np.clip(t + dt, 0.0, p.tau))
            if abs(dt) < NEWTON_TOL:
                break
        xt, _, _ = p.state(t)
        return t, float(np.linalg.norm(xt - x))

    def incidence(self, z, x) -> float:
        return self.locate(z, x)[1]

    def curve_point(self, z, t):
        return self.path(z).state(float(t))[0].copy()

    def curve_param(self, z, x):
        return self.locate(z, x)[0]

    # -- charts
    def _section_time(self, p: GeodesicPath, x0, eT, xp, t_guess):
        t = t_guess
        for _ in range(40):
            xt, vt, _ = p.state(t)
            g = eT @ (xt - x0) - xp
            dt = -g / (eT @ vt)
            t += dt
            if abs(dt) < NEWTON_TOL:
                break
        if not (-1e-9 <= t <= p.tau + 1e-9):
            raise ChartDomain("geodesic does not cross the chart section inside the disk")
        return t

    def phi_chart(self, z, x) -> PhiChart:
        z0 = np.asarray(z, float)
        t0, dist = self.locate(z0, x)
        if dist > 1e-6 * self.r_dom:
            raise NotIncident(f"x={x} is not on gamma_z (distance {dist:.2e})")
        p0 = self.path(z0)
        x0, v0, _ = p0.state(t0)
        eT = v0 / np.linalg.norm(v0)
        eN = _rot(eT)
        frame = np.column_stack([eT, eN])
        x0 = x0.copy()

        def crossing(zz, xp):
            p = self.path(zz)
            t = self._section_time(p, x0, eT, float(np.atleast_1d(xp)[0]), t0)
            return p.state(t)

        def phi(zz, xp):
            xt, _, _ = crossing(zz, xp)
            return np.atleast_1d(eN @ (xt - x0))

        def phi_z(zz, xp):
            _, vt, Y = crossing(zz, xp)
            P = Y[:2]
            return (eN @ P - (eN @ vt) * (eT @ P) / (eT @ vt))[None, :]

        def phi_xp(zz, xp):
            _, vt, _ = crossing(zz, xp)
            return np.array([[(eN @ vt) / (eT @ vt)]])

        return PhiChart(1, 1, phi, x0, frame, phi_z, phi_xp, None)

    def _normal_row(self, z, x):
        t, dist = self.locate(z, x)
        if dist > 1e-6 * self.r_dom:
            raise NotIncident(f"x={x} is not on gamma_z (distance {dist:.2e})")
        xt, vt, Y = self.path(z).state(t)
        eN = _rot(vt / np.linalg.norm(vt))
        return eN, eN @ Y[:2], xt

    def b_chart(self, z, x) -> BChart:
        """Chart ``z'' = b(x, z')`` with ``z''`` the better-conditioned of ``beta, alpha``."""
        z0 = np.asarray(z, float)
        _, row, _ = self._normal_row(z0, x)
        j = int(np.argmax(np.abs(row)))
        i = 1 - j

        def join(zp, zj):
            zz = np.empty(2)
            zz[i] = np.atleast_1d(zp)[0]
            zz[j] = zj
            return zz

        # last solve per point: (z', z'', dz''/dz') for a first-order warm start
        warm = {}

        def b(xx, zp):
            xx = np.asarray(xx, float)
            zp0 = float(np.atleast_1d(zp)[0])
            key = xx.tobytes()
            if key in warm:
                zp_w, zj_w, slope = warm[key]
                zj = zj_w + slope * (zp0 - zp_w)
            else:
                zj = float(z0[j])
            for _ in range(50):
                zz = join(zp, zj)
                p = self.path(zz)
                t, _ = self.locate(zz, xx)
                xt, vt, Y = p.state(t)
                eN = _rot(vt / np.linalg.norm(vt))
                F = eN @ (xx - xt)
                row = eN @ Y[:2]
                step = F / row[j]
                zj += step
                if abs(step) < NEWTON_TOL:
                    break
            else:
                raise ChartDomain("b-chart Newton solve did not converge")
            warm[key] = (zp0, zj, -row[i] / row[j])
            return np.atleast_1d(zj)

        def at(xx, zp):
            zz = join(zp, b(xx, zp)[0])
            eN, row, _ = self._normal_row(zz, xx)
            return eN, row

        def b_x(xx, zp):
            eN, row = at(xx, zp)
            return (eN / row[j])[None, :]

        def b_zp(xx, zp):
            _, row = at(xx, zp)
            return np.array([[-row[i] / row[j]]])

        return BChart((i,), (j,), b, b_x, b_zp, None)

    # -- conjugate points along a geodesic
    def conjugate_partners(self, z, t_x, exclude_steps: int = 10):
        """Times ``t_y != t_x`` on ``gamma_z`` conjugate to ``t_x`` (refined by bisection)."""
        p = self.path(z)
        _, vx, Yx = p.state(t_x)
        rx = _rot(vx / np.linalg.norm(vx)) @ Yx[:2]
        rx /= np.linalg.norm(rx)
        rows = p.normal_rows()
        rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        f = rx[0] * rows[:, 1] - rx[1] * rows[:, 0]

        def fval(t):
            _, vt, Yt = p.state(t)
            r = _rot(vt / np.linalg.norm(vt)) @ Yt[:2]
            r /= np.linalg.norm(r)
            return rx[0] * r[1] - rx[1] * r[0]

        out = []
        far = np.abs(p.t - t_x) > exclude_steps * p.h
        for k in range(len(f) - 1):
            if not (far[k] and far[k + 1]):
                continue
            if np.sign(f[k]) != np.sign(f[k + 1]):
                lo, hi, flo = p.t[k], p.t[k + 1], f[k]
                while hi - lo > 1e-13:
                    mid = 0.5 * (lo + hi)
                    fm = fval(mid)
                    if np.sign(fm) == np.sign(flo):
                        lo, flo = mid, fm
                    else:
                        hi = mid
                out.append(0.5 * (lo + hi))
        return out

    def geodesic_through(self, x, direction):
        """``(z, t)`` of the geodesic passing through ``x`` with the given direction.

        The geodesic is integrated backwards from ``x`` to the boundary.
        """
        x = np.asarray(x, float)
        v = self.metric.unit(x, direction)
        fl = geo.shoot(self.metric, x[None], -v[None], self.h)
        xe, ve = fl.x_exit[0], -fl.v_exit[0]
        beta = float(np.arctan2(xe[1], xe[0]))
        d = ve / np.linalg.norm(ve)
        alpha = float(np.arctan2(-d[1], -d[0]) - beta)
        alpha = (alpha + np.pi) % (2 * np.pi) - np.pi
        z = np.array([beta % (2 * np.pi), alpha])
        t, dist = self.locate(z, x)
        if dist > 1e-6 * self.r_dom:
            raise NotIncident(f"backward shooting missed x (distance {dist:.2e})")
        return z, t

    # -- sampling
    def sinogram_axes(self, n_grid: int | None = None, n_beta: int = 128,
                      n_alpha: int | None = None):
        n_beta = 128 if n_beta is None else n_beta
        n_alpha = n_beta if n_alpha is None else n_alpha
        beta = 2 * np.pi * np.arange(n_beta) / n_beta
        alpha = -np.pi / 2 + np.pi * (np.arange(n_alpha) + 0.5) / n_alpha
        return (beta, alpha), ("beta", "alpha")

    def curve_samples(self, zs, step):
        """Trapezoid samples along each geodesic at time spacing close to ``step``."""
        zs = np.atleast_2d(np.asarray(zs, float))
        m = max(1, int(round(step / self.h)))
        x0, v0, _ = initial_data(self.metric, zs)
        fl = geo.shoot(self.metric, x0, v0, self.h, record_every=m)
        pts = np.concatenate([fl.x, fl.x_exit[:, None, :]], axis=1)
        T = np.broadcast_to(np.append(fl.t, np.nan), pts.shape[:2]).copy()
        valid = np.isfinite(pts[..., 0])
        valid[:, -1] = False
        T[~valid] = np.nan
        last = np.sum(valid, axis=1)  # index where the exit sample goes
        rows = np.arange(zs.shape[0])
        pts[rows, last] = fl.x_exit
        T[rows, last] = fl.tau
        valid[rows, last] = True
        Tf = np.where(valid, T, 0.0)
        w = np.zeros_like(Tf)
        dt = np.diff(Tf, axis=1)
        dt = np.where(valid[:, 1:], dt, 0.0)
        w[:, :-1] += 0.5 * dt
        w[:, 1:] += 0.5 * dt
        pts = np.where(valid[..., None], pts, 0.0)
        return pts, w

    def sample_incidence(self, count: int, rng=None, alpha_max: float = 1.3):
        """Random ``(z, x)`` with ``x`` strictly inside, geodesics prefetched."""
        rng = np.random.default_rng(rng)
        beta = rng.uniform(0, 2 * np.pi, count)
        alpha = rng.uniform(-alpha_max, alpha_max, count)
        zs = np.stack([beta, alpha], axis=1)
        self.prefetch(zs)
        frac = rng.uniform(0.05, 0.95, count)
        xs = np.array([self.curve_point(z, f * self.path(z).tau) for z, f in zip(zs, frac)])
        return zs, xs

    # -- batched tangent fit of H_x
    def hx_tangent_residuals(self, zs, xs, step=1e-5, iters=8):
        """``|phi_z w| / |phi_z|`` with ``w`` a fitted tangent of ``H_x`` at ``z``.

        ``H_x`` is traced by solving ``z'' = b(x, z' +- step)`` with batched
        Newton iterations (geodesics integrated up to the transverse line
        through ``x``), then differenced.
        """
        zs = np.atleast_2d(np.asarray(zs, float))
        xs = np.atleast_2d(np.asarray(xs, float))
        M = zs.shape[0]
        # base chart data at every sample
        rows = np.empty((M, 2))
        eT = np.empty((M, 2))
        for a in range(0, M, PREFETCH_CHUNK):
            sl = slice(a, a + PREFETCH_CHUNK)
            self.prefetch(zs[sl])
            for m in range(a, min(M, a + PREFETCH_CHUNK)):
                t, _ = self.locate(zs[m], xs[m])
                _, vt, Y = self.path(zs[m]).state(t)
                eT[m] = vt / np.linalg.norm(vt)
                rows[m] = _rot(eT[m]) @ Y[:2]
        j = np.argmax(np.abs(rows), axis=1)
        i = 1 - j
        sgn = np.concatenate([np.ones(M), -np.ones(M)])
        idx = np.concatenate([np.arange(M)] * 2)
        zz = zs[idx].copy()
        zz[np.arange(2 * M), i[idx]] += sgn * step
        zz = self._batch_b_solve(zz, j[idx], xs[idx], eT[idx], iters)
        w = (zz[:M] - zz[M:]) / (2 * step)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return np.abs(np.sum(rows * w, axis=1)) / np.linalg.norm(rows, axis=1)

    def _batch_b_solve(self, zz, j, xs, eT, iters):
        eN = _rot(eT)
        B = zz.shape[0]
        r = np.arange(B)
        for _ in range(iters):
            x0, v0, Y0 = initial_data(self.metric, zz)
            Y0 = Y0[r, :, j][:, :, None]
            xc, vc, Yc = _shoot_to_section(self.metric, x0, v0, Y0, xs, eT, self.h)
            P = Yc[:, :2, 0]
            dphi = np.sum(eN * P, axis=1) - (np.sum(eN * vc, axis=1)
                                           * np.sum(eT * P, axis=1) / np.sum(eT * vc, axis=1))
            F = np.sum(eN * (xc - xs), axis=1)
            step = -F / dphi
            zz[r, j] += step
            if np.nanmax(np.abs(step)) < NEWTON_TOL:
                break
        return zz


def _shoot_to_section(metric, x0, v0, Y0, pts, eT, h):
    """Integrate until ``(x - pts) . eT`` becomes non-negative; bisect the last step."""
    x, v, Y = x0.copy(), v0.copy(), Y0.copy()
    B = x.shape[0]
    out_x = np.full((B, 2), np.nan)
    out_v = np.full((B, 2), np.nan)
    out_Y = np.full_like(Y, np.nan)
    active = np.ones(B, dtype=bool)
    r2 = metric.r_dom ** 2 * (1 + 1e-9)
    steps = 0
    while np.any(active):
        if steps * h > metric.t_max:
            raise geo.Trapped("geodesic did not reach the section")
        idx = np.nonzero(active)[0]
        xn, vn, Yn = geo.rk4_step(metric, x[idx], v[idx], Y[idx], h)
        g = np.sum((xn - pts[idx]) * eT[idx], axis=1)
        hit = g >= 0
        gone = ~hit & (np.sum(xn * xn, axis=1) > r2) & (steps > 0)
        if np.any(hit):
            hi_idx = idx[hit]
            lo = np.zeros(hi_idx.size)
            hi = np.full(hi_idx.size, h)
            xa, va, Ya = x[hi_idx], v[hi_idx], Y[hi_idx]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                xm, _, _ = geo.rk4_step(metric, xa, va, None, mid)
                pos = np.sum((xm - pts[hi_idx]) * eT[hi_idx], axis=1) >= 0
                hi = np.where(pos, mid, hi)
                lo = np.where(pos, lo, mid)
                if np.max(hi - lo) < 1e-15:
                    break
            xe, ve, Ye = geo.rk4_step(metric, xa, va, Ya, 0.5 * (lo + hi))
            out_x[hi_idx], out_v[hi_idx], out_Y[hi_idx] = xe, ve, Ye
            active[hi_idx] = False
        active[idx[gone]] = False
        keep = idx[~hit]
        x[keep], v[keep], Y[keep] = xn[~hit], vn[~hit], Yn[~hit]
        steps += 1
    return out_x, out_v, out_Y
