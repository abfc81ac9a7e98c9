"""Straight lines in the plane: ``z = (theta, s)``, ``G_z = {x : x . omega(theta) = s}``."""

from __future__ import annotations

import numpy as np

from .charts import BChart, PhiChart
from .errors import ChartDomain, ValidationError
from .fibration import FibrationSpec

CHART_MIN = 0.1
_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def _omega(theta):
    return np.array([np.cos(theta), np.sin(theta)])


class EuclideanLines(FibrationSpec):
    """Lines ``x . omega(theta) = s`` in the disk of radius ``r_dom``.

    Two analytic ``phi`` charts cover the line space: chart A solves for
    ``x2`` (valid for ``|sin theta| > 0.1``), chart B solves for ``x1``
    (valid for ``|cos theta| > 0.1``).  The b-chart is global:
    ``s = b(x, theta) = x . omega(theta)``.
    """

    name = "lines"
    has_curves = True

    def __init__(self, r_dom: float = 1.0, rank_rtol: float = 1e-6):
        super().__init__(2, 2, 1, rank_rtol)
        if r_dom <= 0:
            raise ValidationError("r_dom must be positive")
        self.r_dom = float(r_dom)

    def describe(self):
        return {**super().describe(), "r_dom": self.r_dom}

    # -- incidence and curves
    def incidence(self, z, x) -> float:
        theta, s = np.asarray(z, float)
        return abs(float(np.asarray(x, float) @ _omega(theta)) - s)

    def ray_distance(self, zs, x):
        """Distance from ``x`` to each line in ``zs`` (``(M, 2)``)."""
        zs = np.atleast_2d(np.asarray(zs, float))
        x = np.asarray(x, float)
        return np.abs(x[0] * np.cos(zs[:, 0]) + x[1] * np.sin(zs[:, 0]) - zs[:, 1])

    def curve_point(self, z, t):
        theta, s = np.asarray(z, float)
        c, S = np.cos(theta), np.sin(theta)
        return np.array([s * c - t * S, s * S + t * c])

    def curve_param(self, z, x):
        theta = float(np.asarray(z, float)[0])
        return float(np.asarray(x, float) @ np.array([-np.sin(theta), np.cos(theta)]))

    # -- charts
    def phi_chart(self, z, x, which: str | None = None) -> PhiChart:
        theta = float(np.asarray(z, float)[0])
        S, c = np.sin(theta), np.cos(theta)
        if which is None:
            which = "A" if abs(S) >= abs(c) else "B"
        if which == "A":
            if abs(S) <= CHART_MIN:
                raise ChartDomain(f"chart A needs |sin(theta)| > {CHART_MIN}")
            return PhiChart(1, 1, _phi_a, np.zeros(2), np.eye(2),
                            _phi_a_z, _phi_a_xp, _phi_a_z_xp)
        if which == "B":
            if abs(c) <= CHART_MIN:
                raise ChartDomain(f"chart B needs |cos(theta)| > {CHART_MIN}")
            return PhiChart(1, 1, _phi_b, np.zeros(2), _SWAP.copy(),
                            _phi_b_z, _phi_b_xp, _phi_b_z_xp)
        raise ValidationError(f"unknown chart {which!r}")

    def b_chart(self, z=None, x=None) -> BChart:
        return BChart((0,), (1,), _b, _b_x, _b_zp, _b_x_zp)

    # -- sampling
    def sinogram_axes(self, n_grid: int, n_angles: int = 180):
        theta = np.pi * np.arange(n_angles) / n_angles
        ds = self.r_dom / n_grid
        s = ds * np.arange(-n_grid, n_grid + 1)
        return (theta, s), ("theta", "s")

    def curve_samples(self, zs, step):
        """Midpoint samples of each line across ``[-r_dom, r_dom]``.

        Returns points ``(M, P, 2)`` and weights ``(M, P)``; samples outside
        the disk carry zero weight.
        """
        zs = np.atleast_2d(np.asarray(zs, float))
        P = max(1, int(np.ceil(2 * self.r_dom / step)))
        dt = 2 * self.r_dom / P
        t = -self.r_dom + dt * (np.arange(P) + 0.5)
        c, S = np.cos(zs[:, 0])[:, None], np.sin(zs[:, 0])[:, None]
        s = zs[:, 1][:, None]
        pts = np.stack([s * c - t * S, s * S + t * c], axis=-1)
        w = np.where(np.sum(pts * pts, axis=-1) <= self.r_dom**2, dt, 0.0)
        return pts, w

    def sample_incidence(self, count: int, rng=None):
        """Random ``(z, x)`` with ``x`` in the disk, both charts exercised."""
        rng = np.random.default_rng(rng)
        r = self.r_dom
        theta = rng.uniform(0, 2 * np.pi, count)
        s = rng.uniform(-0.95 * r, 0.95 * r, count)
        half = np.sqrt(r * r - s * s)
        t = rng.uniform(-1, 1, count) * half
        zs = np.stack([theta, s], axis=1)
        xs = np.array([self.curve_point(z, tt) for z, tt in zip(zs, t)])
        return zs, xs


# chart A: x' = x1, x'' = x2
def _phi_a(z, xp):
    theta, s = z
    return np.atleast_1d((s - xp[0] * np.cos(theta)) / np.sin(theta))


def _phi_a_z(z, xp):
    theta, s = z
    S, c = np.sin(theta), np.cos(theta)
    return np.array([[(xp[0] - s * c) / S**2, 1.0 / S]])


def _phi_a_xp(z, xp):
    theta = z[0]
    return np.array([[-np.cos(theta) / np.sin(theta)]])


def _phi_a_z_xp(z, xp):
    S = np.sin(z[0])
    return np.array([[[1.0 / S**2], [0.0]]])


# chart B: x' = x2, x'' = x1
def _phi_b(z, xp):
    theta, s = z
    return np.atleast_1d((s - xp[0] * np.sin(theta)) / np.cos(theta))


def _phi_b_z(z, xp):
    theta, s = z
    S, c = np.sin(theta), np.cos(theta)
    return np.array([[(s * S - xp[0]) / c**2, 1.0 / c]])


def _phi_b_xp(z, xp):
    theta = z[0]
    return np.array([[-np.sin(theta) / np.cos(theta)]])


def _phi_b_z_xp(z, xp):
    c = np.cos(z[0])
    return np.array([[[-1.0 / c**2], [0.0]]])


# b-chart: z' = theta, z'' = s
def _b(x, zp):
    return np.atleast_1d(np.asarray(x, float) @ _omega(zp[0]))


def _b_x(x, zp):
    return _omega(zp[0])[None, :]


def _b_zp(x, zp):
    th = zp[0]
    return np.array([[-x[0] * np.sin(th) + x[1] * np.cos(th)]])


def _b_x_zp(x, zp):
    th = zp[0]
    return np.array([[[-np.sin(th)], [np.cos(th)]]])
