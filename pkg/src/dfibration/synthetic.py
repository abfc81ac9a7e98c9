"""Fibrations given directly by a global chart ``x'' = phi(z, x')``.

Used for user-supplied charts and for small synthetic models with
prescribed conjugate structure (``N = 4, n = 3, n'' = 2``).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .charts import BChart, PhiChart
from .fibration import FibrationSpec


class ChartFibration(FibrationSpec):
    """``Z = {x'' = phi(z, x')}`` with ``x = (x', x'')`` in standard coordinates.

    Derivatives not supplied are taken by central finite differences.  An
    optional global b-chart may be given as ``(idx_prime, idx_dprime, b)``.
    """

    name = "chart"

    def __init__(self, N: int, n: int, n_prime: int, phi: Callable, *, phi_z=None,
                 phi_xp=None, b_chart=None, name: str | None = None, rank_rtol=1e-6):
        super().__init__(N, n, n_prime, rank_rtol)
        self._phi = phi
        self._phi_z = phi_z
        self._phi_xp = phi_xp
        self._b = b_chart
        if name:
            self.name = name

    def phi_chart(self, z=None, x=None) -> PhiChart:
        return PhiChart(self.n_prime, self.n_dprime, self._phi, np.zeros(self.n),
                        np.eye(self.n), self._phi_z, self._phi_xp, None)

    def b_chart(self, z=None, x=None) -> BChart | None:
        if self._b is None:
            return None
        ip, idp, b = self._b[:3]
        fns = list(self._b[3:]) + [None] * (3 - len(self._b[3:]))
        return BChart(tuple(ip), tuple(idp), b, *fns)

    def incidence(self, z, x) -> float:
        x = np.asarray(x, float)
        xp, xpp = x[: self.n_prime], x[self.n_prime:]
        return float(np.linalg.norm(xpp - self._phi(np.asarray(z, float), xp)))

    def point(self, z, xp):
        """The point of ``G_z`` over ``x'``."""
        xp = np.atleast_1d(np.asarray(xp, float))
        return np.concatenate([xp, self._phi(np.asarray(z, float), xp)])


def two_profiles(f: Callable, df: Callable, g: Callable, dg: Callable, name="profiles"):
    """``phi(z, x') = (z1 + z2 f(x'), z3 + z4 g(x'))`` with ``N = 4, n = 3``.

    A triplet ``(z; x, y)`` has degree ``[f(x') = f(y')] + [g(x') = g(y')]``.
    """

    def phi(z, xp):
        s = xp[0]
        return np.array([z[0] + z[1] * f(s), z[2] + z[3] * g(s)])

    def phi_z(z, xp):
        s = xp[0]
        return np.array([[1.0, f(s), 0.0, 0.0], [0.0, 0.0, 1.0, g(s)]])

    def phi_xp(z, xp):
        s = xp[0]
        return np.array([[z[1] * df(s)], [z[3] * dg(s)]])

    def b(x, zp):
        s = x[0]
        return np.array([x[1] - zp[0] * f(s), x[2] - zp[1] * g(s)])

    def b_x(x, zp):
        s = x[0]
        return np.array([[-zp[0] * df(s), 1.0, 0.0], [-zp[1] * dg(s), 0.0, 1.0]])

    def b_zp(x, zp):
        s = x[0]
        return np.array([[-f(s), 0.0], [0.0, -g(s)]])

    def b_x_zp(x, zp):
        s = x[0]
        out = np.zeros((2, 3, 2))
        out[0, 0, 0] = -df(s)
        out[1, 0, 1] = -dg(s)
        return out

    return ChartFibration(4, 3, 1, phi, phi_z=phi_z, phi_xp=phi_xp,
                          b_chart=((1, 3), (0, 2), b, b_x, b_zp, b_x_zp), name=name)


def sines(c: float = 2.0) -> ChartFibration:
    """``f = sin``, ``g = sin(c x')``.

    With ``c = 2`` the degree-1 triplets ``x' + y' = pi`` contain the isolated
    degree-2 triplet ``x' = 0, y' = pi``.  Use ``x'`` in ``(-1, 4)``.
    """
    return two_profiles(np.sin, np.cos, lambda s: np.sin(c * s), lambda s: c * np.cos(c * s),
                        name=f"sines({c:g})")


def linear() -> ChartFibration:
    """``f = g = x'``: no conjugate triplets."""
    one = lambda s: 1.0  # noqa: E731
    ident = lambda s: s  # noqa: E731
    return two_profiles(ident, one, ident, one, name="linear")


def flat() -> ChartFibration:
    """``f = g = 1``: rows of ``phi_z`` never move, every triplet has degree 2."""
    one = lambda s: 1.0  # noqa: E731
    zero = lambda s: 0.0  # noqa: E731
    return two_profiles(one, zero, one, zero, name="flat")
