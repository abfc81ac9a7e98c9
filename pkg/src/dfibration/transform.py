"""Discrete double fibration transforms and their exact adjoints.

Functions on ``X`` live on an ``n x n`` cell-centred grid over the square
``[-r, r]^2`` (values outside the disk are zero).  Functions on ``G`` live
on a tensor grid of the fibration's parameters.  Inner products use the
plain reference measures: ``dx^2`` per pixel on ``X`` and the product of
the parameter spacings on ``G``.  The forward map samples each ``G_z`` with
a fixed quadrature and bilinear interpolation; the adjoint is its exact
transpose with respect to these inner products.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import UnsupportedSpec, ValidationError
from .fibration import FibrationSpec

log = logging.getLogger(__name__)

CHUNK_SAMPLES = 2_000_000


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True)
class GridFunction:
    """Samples ``values[i, j] = f(x1_i, x2_j)`` on the cell centres of ``[-r, r]^2``."""

    values: np.ndarray
    r_dom: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError("grid values must be a square 2D array")
        if not np.all(np.isfinite(v)):
            raise ValidationError("grid values must be finite")
        v[~disk_mask(v.shape[0], self.r_dom)] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return 2.0 * self.r_dom / self.n

    @property
    def coords(self):
        return grid_coords(self.n, self.r_dom)

    @property
    def mask(self):
        return disk_mask(self.n, self.r_dom)

    @property
    def points(self):
        c = self.coords
        return np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1)

    def inner(self, other: "GridFunction") -> float:
        return float(np.sum(self.values * other.values) * self.spacing**2)

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def __add__(self, other):
        return GridFunction(self.values + other.values, self.r_dom)

    def __sub__(self, other):
        return GridFunction(self.values - other.values, self.r_dom)

    def __mul__(self, c):
        return GridFunction(self.values * c, self.r_dom)

    __rmul__ = __mul__

    @classmethod
    def from_function(cls, fn, n: int, r_dom: float = 1.0) -> "GridFunction":
        c = grid_coords(n, r_dom)
        pts = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1)
        return cls(fn(pts), r_dom)

    @classmethod
    def zeros(cls, n: int, r_dom: float = 1.0) -> "GridFunction":
        return cls(np.zeros((n, n)), r_dom)


@dataclass(frozen=True)
class SinogramFunction:
    """Values on the tensor grid ``axes[0] x axes[1]`` of ``G`` parameters."""

    values: np.ndarray
    axes: tuple
    labels: tuple = ("z1", "z2")

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        shape = tuple(len(a) for a in self.axes)
        if v.shape != shape:
            raise ValidationError(f"sinogram shape {v.shape} does not match axes {shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("sinogram values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "axes", tuple(np.asarray(a, float) for a in self.axes))

    @property
    def spacing(self):
        return tuple(float(a[1] - a[0]) if len(a) > 1 else 1.0 for a in self.axes)

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def points(self):
        a, b = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)

    def inner(self, other: "SinogramFunction") -> float:
        return float(np.sum(self.values * other.values) * self.cell_measure)

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))


@dataclass(frozen=True)
class Quadrature:
    """Sampling rule along ``G_z``; ``step=None`` means half a pixel."""

    rule: str = "midpoint"
    step: float | None = None
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.rule not in ("midpoint", "trapezoid"):
            raise ValidationError(f"unknown quadrature rule {self.rule!r}")
        if self.interpolation != "bilinear":
            raise ValidationError("only bilinear interpolation is supported")
        if self.step is not None and not self.step > 0:
            raise ValidationError("quadrature step must be positive")

    def step_for(self, spacing: float) -> float:
        return 0.5 * spacing if self.step is None else float(self.step)


def grid_coords(n: int, r_dom: float = 1.0):
    d = 2.0 * r_dom / n
    return -r_dom + d * (np.arange(n) + 0.5)


def disk_mask(n: int, r_dom: float = 1.0):
    c = grid_coords(n, r_dom)
    return (c[:, None] ** 2 + c[None, :] ** 2) <= r_dom**2


def bilinear_stencil(points, n: int, r_dom: float):
    """Flat indices ``(..., 4)`` and weights ``(..., 4)`` of bilinear interpolation.

    Neighbours outside the grid get weight zero (zero extension); the
    weights of in-grid points sum to one.
    """
    d = 2.0 * r_dom / n
    u = (points[..., 0] + r_dom) / d - 0.5
    w = (points[..., 1] + r_dom) / d - 0.5
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(w).astype(np.int64)
    fu = u - i0
    fw = w - j0
    idx = np.empty(points.shape[:-1] + (4,), dtype=np.int64)
    wt = np.empty(points.shape[:-1] + (4,))
    for c, (di, dj) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
        ii, jj = i0 + di, j0 + dj
        ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
        idx[..., c] = np.where(ok, ii * n + jj, 0)
        a = fu if di else 1.0 - fu
        b = fw if dj else 1.0 - fw
        wt[..., c] = np.where(ok, a * b, 0.0)
    return idx, wt


# ---------------------------------------------------------------------------
# projector

class Projector:
    """Matrix-free sampled transform ``R`` for a fibration on a given grid.

    Args:
        spec: a fibration providing ``sinogram_axes`` and ``curve_samples``.
        n: image grid size; ``r_dom`` is taken from the spec.
        q: quadrature along ``G_z``.
        axes: optional explicit ``G`` parameter axes.
        weight: optional point weight ``w(x)`` multiplying the integrand.
        cache_samples: keep sample points in memory (used for geodesics).
    """

    def __init__(self, spec: FibrationSpec, n: int, q: Quadrature | None = None, axes=None,
                 weight=None, cache_samples: bool | None = None, **axis_kw):
        if not getattr(spec, "has_curves", False) or not hasattr(spec, "curve_samples"):
            raise UnsupportedSpec(f"fibration {spec.name!r} has no curve parametrization")
        self.spec = spec
        self.n = int(n)
        self.r_dom = float(spec.r_dom)
        self.q = q or Quadrature()
        if axes is None:
            axes, labels = spec.sinogram_axes(self.n, **axis_kw)
        else:
            labels = ("z1", "z2")
        self.axes = tuple(np.asarray(a, float) for a in axes)
        self.labels = tuple(labels)
        self.shape = tuple(len(a) for a in self.axes)
        a, b = np.meshgrid(*self.axes, indexing="ij")
        self.zs = np.stack([a.ravel(), b.ravel()], axis=1)
        self.dz = float(np.prod([ax[1] - ax[0] if len(ax) > 1 else 1.0 for ax in self.axes]))
        self.dx = 2.0 * self.r_dom / self.n
        self.step = self.q.step_for(self.dx)
        self.weight = weight
        if cache_samples is None:
            cache_samples = spec.name == "xray"
        self._cached = None
        if cache_samples:
            pts, w = spec.curve_samples(self.zs, self.step)
            self._cached = (pts, self._weights(pts, w))
        self.mask = disk_mask(self.n, self.r_dom).ravel()

    def _weights(self, pts, w):
        k = np.asarray(self.spec.kappa(None, None), dtype=float) if self.weight is None else 1.0
        w = w * k
        if self.weight is not None:
            w = w * np.where(w != 0, self.weight(pts), 0.0)
        return w

    def _chunks(self):
        if self._cached is not None:
            pts, w = self._cached
            per = max(1, CHUNK_SAMPLES // max(1, pts.shape[1]))
            for a in range(0, pts.shape[0], per):
                yield slice(a, a + per), pts[a:a + per], w[a:a + per]
            return
        P = max(1, int(np.ceil(2 * self.r_dom / self.step)))
        per = max(1, CHUNK_SAMPLES // P)
        for a in range(0, self.zs.shape[0], per):
            pts, w = self.spec.curve_samples(self.zs[a:a + per], self.step)
            yield slice(a, a + per), pts, self._weights(pts, w)

    def sinogram(self, values) -> SinogramFunction:
        return SinogramFunction(np.asarray(values).reshape(self.shape), self.axes, self.labels)

    def forward(self, f: GridFunction) -> SinogramFunction:
        self._check_grid(f)
        fv = (f.values.ravel() * self.mask)
        out = np.empty(self.zs.shape[0])
        for sl, pts, w in self._chunks():
            idx, bw = bilinear_stencil(pts, self.n, self.r_dom)
            out[sl] = np.einsum("mp,mpc->m", w, fv[idx] * bw)
        return self.sinogram(out)

    def adjoint(self, u: SinogramFunction) -> GridFunction:
        uv = np.asarray(u.values, float).ravel()
        if uv.size != self.zs.shape[0]:
            raise ValidationError("sinogram does not match the projector grid")
        acc = np.zeros(self.n * self.n)
        for sl, pts, w in self._chunks():
            idx, bw = bilinear_stencil(pts, self.n, self.r_dom)
            c = (w * uv[sl][:, None])[..., None] * bw
            acc += np.bincount(idx.ravel(), weights=c.ravel(), minlength=acc.size)
        acc *= self.dz / self.dx**2
        acc[~self.mask] = 0.0
        return GridFunction(acc.reshape(self.n, self.n), self.r_dom)

    def normal(self, f: GridFunction) -> GridFunction:
        return self.adjoint(self.forward(f))

    def sparse_rows(self, rows=None):
        """Sampling matrix ``G`` (rays x pixels) as CSR; ``R f = G f``."""
        mats = []
        for sl, pts, w in self._chunks():
            idx, bw = bilinear_stencil(pts, self.n, self.r_dom)
            m = np.broadcast_to(np.arange(pts.shape[0])[:, None, None], idx.shape)
            data = (w[..., None] * bw).ravel()
            keep = data != 0
            g = sp.coo_matrix((data[keep], (m.ravel()[keep], idx.ravel()[keep])),
                              shape=(pts.shape[0], self.n * self.n)).tocsr()
            g = g @ sp.diags(self.mask.astype(float))
            mats.append(g)
        return sp.vstack(mats).tocsr()

    def normal_diagonal(self) -> np.ndarray:
        """Diagonal of the normal matrix ``G^T diag(dz) G / dx^2`` (chunked)."""
        diag = np.zeros(self.n * self.n)
        for sl, pts, w in self._chunks():
            idx, bw = bilinear_stencil(pts, self.n, self.r_dom)
            m = np.broadcast_to(np.arange(pts.shape[0])[:, None, None], idx.shape)
            data = (w[..., None] * bw).ravel()
            keep = data != 0
            g = sp.coo_matrix((data[keep], (m.ravel()[keep], idx.ravel()[keep])),
                              shape=(pts.shape[0], self.n * self.n)).tocsr()
            g.sum_duplicates()
            diag += np.asarray(g.multiply(g).sum(axis=0)).ravel()
        diag *= self.dz / self.dx**2
        diag[~self.mask] = 0.0
        return diag.reshape(self.n, self.n)

    def _check_grid(self, f):
        if f.n != self.n or abs(f.r_dom - self.r_dom) > 1e-12:
            raise ValidationError(f"grid {f.n} / r={f.r_dom} does not match projector "
                                  f"{self.n} / r={self.r_dom}")


_PROJECTORS: dict = {}


def projector(spec, n, q=None, **kw) -> Projector:
    """Cached :class:`Projector` for ``(spec, n, q)``."""
    key = (id(spec), int(n), q or Quadrature(), tuple(sorted(kw.items())))
    p = _PROJECTORS.get(key)
    if p is None or p.spec is not spec:
        if len(_PROJECTORS) > 8:
            _PROJECTORS.clear()
        p = Projector(spec, n, q, **kw)
        _PROJECTORS[key] = p
    return p


def forward(spec: FibrationSpec, f: GridFunction, q: Quadrature | None = None,
            **kw) -> SinogramFunction:
    """``Rf(z) = sum_i kappa f(x_i) w_i`` over samples of ``G_z``."""
    return projector(spec, f.n, q, **kw).forward(f)


def adjoint(spec: FibrationSpec, u: SinogramFunction, n: int, q: Quadrature | None = None,
            **kw) -> GridFunction:
    """Exact transpose of :func:`forward` under the reference inner products."""
    return projector(spec, n, q, **kw).adjoint(u)


def xray_forward(metric, w, f: GridFunction, n_beta: int = 128, n_alpha: int | None = None,
                 h: float | None = None, q: Quadrature | None = None) -> SinogramFunction:
    """Geodesic X-ray transform ``int_0^tau w(gamma(t)) f(gamma(t)) dt``.

    ``w`` is a point weight ``w(x)`` or ``None`` for ``w = 1``.
    """
    from .xray import GeodesicXRay

    if abs(metric.r_dom - f.r_dom) > 1e-12:
        raise ValidationError("metric and grid disk radii differ")
    spec = GeodesicXRay(metric, h=h)
    q = q or Quadrature("trapezoid")
    return Projector(spec, f.n, q, weight=w, n_beta=n_beta, n_alpha=n_alpha).forward(f)


def adjoint_direct(spec: FibrationSpec, u: SinogramFunction, n: int) -> GridFunction:
    """Independent discretization of ``R^* u(x) = int_{H_x} u dH_x`` (lines only).

    For each pixel the sinogram is interpolated linearly in ``s`` at
    ``s = x . omega(theta)`` and summed over the angle grid.
    """
    if spec.name != "lines":
        raise UnsupportedSpec("direct adjoint is implemented for the lines fibration")
    theta, s = u.axes
    g = GridFunction.zeros(n, spec.r_dom)
    pts = g.points.reshape(-1, 2)
    acc = np.zeros(pts.shape[0])
    for a, th in enumerate(theta):
        sx = pts @ np.array([np.cos(th), np.sin(th)])
        acc += np.interp(sx, s, u.values[a], left=0.0, right=0.0)
    acc *= theta[1] - theta[0]
    return GridFunction(acc.reshape(n, n), spec.r_dom)


# ---------------------------------------------------------------------------
# analytic line integrals (chart consistency)

def curve_integral(spec, fn, z, family: str = "curve", nodes: int = 96) -> float:
    """Gauss-Legendre integral of ``fn`` over ``G_z ∩ disk`` for a line fibration.

    ``family="curve"`` integrates in the arclength parameter of the b-chart
    level set ``{x . omega = s}``; ``family="phi"`` integrates over ``x'`` in
    the ``phi`` chart with the arclength factor ``sqrt(1 + |phi_x'|^2)``.
    """
    if spec.name != "lines":
        raise UnsupportedSpec("analytic curve integrals are implemented for lines")
    z = np.asarray(z, float)
    r = spec.r_dom
    s = z[1]
    if abs(s) >= r:
        return 0.0
    half = np.sqrt(r * r - s * s)
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    if family == "curve":
        t = half * gx
        pts = np.array([spec.curve_point(z, tt) for tt in t])
        return float(half * np.sum(gw * fn(pts)))
    if family == "phi":
        ends = [spec.curve_point(z, -half), spec.curve_point(z, half)]
        ch = spec.phi_chart(z, ends[0])
        a, b = sorted(ch.to_local(e)[0][0] for e in ends)
        c, hw = 0.5 * (a + b), 0.5 * (b - a)
        xp = c + hw * gx
        pts = np.array([ch.from_local([u], ch.phi(z, np.array([u]))) for u in xp])
        jac = np.array([np.sqrt(1.0 + np.sum(ch.phi_xp(z, np.array([u])) ** 2)) for u in xp])
        return float(hw * np.sum(gw * jac * fn(pts)))
    raise ValidationError(f"unknown chart family {family!r}")


# ---------------------------------------------------------------------------
# phantoms

def gaussian(center=(0.0, 0.0), width: float = 0.15, amplitude: float = 1.0):
    c = np.asarray(center, float)

    def fn(p):
        return amplitude * np.exp(-np.sum((np.asarray(p) - c) ** 2, axis=-1) / (2 * width**2))

    return fn


def disk(radius: float = 0.5, center=(0.0, 0.0)):
    c = np.asarray(center, float)

    def fn(p):
        return (np.sum((np.asarray(p) - c) ** 2, axis=-1) <= radius**2).astype(float)

    return fn


PHANTOMS = {
    "gaussian": lambda r: gaussian((0.0, 0.0), 0.15 * r),
    "offcenter": lambda r: gaussian((0.3 * r, -0.2 * r), 0.12 * r),
    "disk": lambda r: disk(0.5 * r),
}


def phantom(name: str, n: int, r_dom: float = 1.0, center=None) -> GridFunction:
    """Named phantom on an ``n x n`` grid; ``"point"`` is a Gaussian of width 2 cells."""
    if name == "point":
        c = (0.0, 0.0) if center is None else center
        return GridFunction.from_function(gaussian(c, 2 * (2.0 * r_dom / n)), n, r_dom)
    if name not in PHANTOMS:
        raise ValidationError(f"unknown phantom {name!r}; choose from {sorted(PHANTOMS) + ['point']}")
    return GridFunction.from_function(PHANTOMS[name](r_dom), n, r_dom)
