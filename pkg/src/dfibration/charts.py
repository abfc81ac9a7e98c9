"""Local chart objects for a double fibration and finite-difference derivatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

FD_STEP = 1e-5


def central_diff(f, p, step=FD_STEP, richardson_rtol=1e-4):
    """Jacobian of ``f`` at ``p`` by central differences with a Richardson check.

    ``f`` maps an array shaped like ``p`` to an array of any shape; the result
    has shape ``f(p).shape + p.shape``.  The step-``h`` and step-``h/2``
    estimates are combined by Richardson extrapolation and a disagreement
    larger than ``richardson_rtol`` (relative to the estimate size) is logged.
    """
    p = np.asarray(p, dtype=float)
    f0 = np.asarray(f(p), dtype=float)
    flat = p.ravel()
    out = np.empty(f0.shape + (flat.size,))
    worst = 0.0
    for i in range(flat.size):
        def d(hh):
            e = np.zeros_like(flat)
            e[i] = hh
            return (np.asarray(f((flat + e).reshape(p.shape)))
                    - np.asarray(f((flat - e).reshape(p.shape)))) / (2 * hh)
        d1, d2 = d(step), d(step / 2)
        out[..., i] = (4 * d2 - d1) / 3
        scale = max(np.max(np.abs(d2)), 1e-12)
        worst = max(worst, float(np.max(np.abs(d1 - d2))) / scale)
    if worst > richardson_rtol:
        log.debug("finite-difference Richardson mismatch %.2e", worst)
    return out.reshape(f0.shape + p.shape)


@dataclass(frozen=True)
class PhiChart:
    """Local expression ``x'' = phi(z, x')`` of the incidence relation.

    ``X`` coordinates are affine: ``x = origin + frame @ concat(x', x'')``.
    Missing derivative callables fall back to finite differences.
    """

    n_prime: int
    n_dprime: int
    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    origin: np.ndarray
    frame: np.ndarray
    phi_z_fn: Callable | None = None
    phi_xp_fn: Callable | None = None
    phi_z_xp_fn: Callable | None = None

    def to_local(self, x):
        c = np.linalg.solve(self.frame, np.asarray(x, dtype=float) - self.origin)
        return c[: self.n_prime], c[self.n_prime:]

    def from_local(self, xp, xpp):
        return self.origin + self.frame @ np.concatenate([np.atleast_1d(xp), np.atleast_1d(xpp)])

    def covector_to_local(self, eta):
        """Global covector -> (eta', eta'') in chart coordinates."""
        c = self.frame.T @ np.asarray(eta, dtype=float)
        return c[: self.n_prime], c[self.n_prime:]

    def covector_from_local(self, eta_local):
        return np.linalg.solve(self.frame.T, np.asarray(eta_local, dtype=float))

    def phi_z(self, z, xp):
        if self.phi_z_fn is not None:
            return np.atleast_2d(self.phi_z_fn(z, xp))
        return np.atleast_2d(central_diff(lambda zz: self.phi(zz, xp), z))

    def phi_xp(self, z, xp):
        if self.phi_xp_fn is not None:
            return np.asarray(self.phi_xp_fn(z, xp)).reshape(self.n_dprime, self.n_prime)
        return central_diff(lambda xx: self.phi(z, xx), np.atleast_1d(xp)).reshape(
            self.n_dprime, self.n_prime
        )

    def phi_z_xp(self, z, xp):
        """Array ``[i, j, a] = d/dx'_a (d phi_i / d z_j)``."""
        if self.phi_z_xp_fn is not None:
            return np.asarray(self.phi_z_xp_fn(z, xp))
        return central_diff(lambda xx: self.phi_z(z, xx), np.atleast_1d(xp)).reshape(
            self.n_dprime, -1, self.n_prime
        )

    def conormal(self, z, xp, eta_dd):
        """Global covector ``(-phi_x'^T eta'', eta'')`` conormal to ``G_z``."""
        eta_dd = np.atleast_1d(np.asarray(eta_dd, dtype=float))
        loc = np.concatenate([-self.phi_xp(z, xp).T @ eta_dd, eta_dd])
        return self.covector_from_local(loc)


@dataclass(frozen=True)
class BChart:
    """Local expression ``z'' = b(x, z')``; ``z`` is split by index lists."""

    idx_prime: tuple
    idx_dprime: tuple
    b: Callable[[np.ndarray, np.ndarray], np.ndarray]
    b_x_fn: Callable | None = None
    b_zp_fn: Callable | None = None
    b_x_zp_fn: Callable | None = None

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[list(self.idx_prime)], z[list(self.idx_dprime)]

    def join(self, zp, zpp):
        N = len(self.idx_prime) + len(self.idx_dprime)
        z = np.empty(N)
        z[list(self.idx_prime)] = zp
        z[list(self.idx_dprime)] = zpp
        return z

    def b_x(self, x, zp):
        if self.b_x_fn is not None:
            return np.atleast_2d(self.b_x_fn(x, zp))
        return np.atleast_2d(central_diff(lambda xx: self.b(xx, zp), np.asarray(x, float)))

    def b_zp(self, x, zp):
        if self.b_zp_fn is not None:
            return np.atleast_2d(self.b_zp_fn(x, zp))
        return np.atleast_2d(central_diff(lambda zz: self.b(x, zz), np.atleast_1d(zp)))

    def b_x_zp(self, x, zp):
        """Array ``[i, j, a] = d/dz'_a (d b_i / d x_j)``."""
        if self.b_x_zp_fn is not None:
            return np.asarray(self.b_x_zp_fn(x, zp))
        nd = len(self.idx_dprime)
        return central_diff(lambda zz: self.b_x(x, zz), np.atleast_1d(np.asarray(zp, float))
                            ).reshape(nd, -1, len(self.idx_prime))
