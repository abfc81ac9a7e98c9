"""Normal operator ``R^* R``: inversion, order probes and conjugate-point artifacts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import gamma, pi, sqrt

import numpy as np
from scipy import ndimage

from . import fibration as fb
from . import transform as tr
from .errors import ConjugateContamination, NoArtifactFound, PaddingTooSmall, ValidationError
from .lines import EuclideanLines

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# normal operator

class NormalOperator:
    """``R^* R`` for a fibration on an ``n x n`` grid (adjoint of the forward map)."""

    def __init__(self, spec, n: int, q: tr.Quadrature | None = None, **kw):
        self.spec = spec
        self.projector = tr.projector(spec, n, q, **kw)
        self.n = n

    def apply(self, f: tr.GridFunction) -> tr.GridFunction:
        return self.projector.normal(f)

    __call__ = apply

    def matrix(self) -> np.ndarray:
        """Dense normal matrix on the flattened grid (small grids only)."""
        if self.n > 64:
            raise ValidationError("dense materialization is limited to grids up to 64^2")
        P = self.projector
        G = P.sparse_rows()
        return np.asarray((G.T @ G).todense()) * (P.dz / P.dx**2)

    def diagonal(self) -> np.ndarray:
        return self.projector.normal_diagonal()

    def value_at(self, f: tr.GridFunction, x0) -> float:
        """``(R^* R f)`` at the pixel containing ``x0``, using only the rays that reach it."""
        return normal_at(self.projector, f, x0)


def normal_apply(spec, f: tr.GridFunction, q: tr.Quadrature | None = None, **kw) -> tr.GridFunction:
    """``R^* R f`` with the transpose adjoint."""
    return tr.projector(spec, f.n, q, **kw).normal(f)


def normal_at(P: tr.Projector, f: tr.GridFunction, x0) -> float:
    """Exact value of ``P.normal(f)`` at the pixel containing ``x0``.

    Only rays passing within ``2.2`` pixels of the pixel centre can touch its
    bilinear stencil; this requires a ``ray_distance`` method on the spec.
    """
    if not hasattr(P.spec, "ray_distance"):
        raise ValidationError(f"{P.spec.name} does not support restricted evaluation")
    n, r = P.n, P.r_dom
    i = int(np.clip(np.floor((x0[0] + r) / P.dx), 0, n - 1))
    j = int(np.clip(np.floor((x0[1] + r) / P.dx), 0, n - 1))
    c = tr.grid_coords(n, r)
    xc = np.array([c[i], c[j]])
    near = np.nonzero(P.spec.ray_distance(P.zs, xc) <= 2.2 * P.dx)[0]
    pts, w = P.spec.curve_samples(P.zs[near], P.step)
    w = P._weights(pts, w)
    idx, bw = tr.bilinear_stencil(pts, n, r)
    fv = f.values.ravel() * P.mask
    Rf = np.einsum("mp,mpc->m", w, fv[idx] * bw)
    hit = (idx == i * n + j) * bw
    val = np.sum(Rf * np.einsum("mp,mpc->m", w, hit))
    return float(val * P.dz / P.dx**2) if P.mask[i * n + j] else 0.0


# ---------------------------------------------------------------------------
# Helgason filter and inversion

def helgason_constant_printed(d: int, n: int) -> float:
    """The constant as printed with the inversion formula: ``(4 pi)^d G(n/2) / G((n-1)/2)``."""
    return (4 * pi) ** d * gamma(n / 2) / gamma((n - 1) / 2)


def inversion_constant(d: int, n: int) -> float:
    """Constant making ``f = C^{-1} (-Delta)^{d/2} R_d^* R_d f`` exact.

    ``C = (4 pi)^{d/2} G(n/2) / G((n-d)/2)`` with ``R_d^*`` averaging over
    the d-planes through a point with unit total measure.
    """
    return (4 * pi) ** (d / 2) * gamma(n / 2) / gamma((n - d) / 2)


def fractional_laplacian(values, spacing: float, order: float = 1.0, pad: int = 2,
                         periodic: bool = False):
    """Apply the Fourier multiplier ``|xi|^order`` to a 2D array.

    Non-periodic input is zero padded to ``pad`` times its size.  The
    multiplier is zero at ``xi = 0``.
    """
    v = np.asarray(values, dtype=float)
    n0, n1 = v.shape
    if periodic:
        m0, m1 = n0, n1
    else:
        if pad < 2:
            raise PaddingTooSmall(f"padding factor {pad} < 2")
        nz = np.nonzero(v)
        if nz[0].size:
            ext = max(nz[0].max() - nz[0].min() + 1, nz[1].max() - nz[1].min() + 1)
            if ext > pad * min(n0, n1) / 2:
                raise PaddingTooSmall("support exceeds half the padded grid")
        m0, m1 = pad * n0, pad * n1
    F = np.fft.fft2(v, s=(m0, m1))
    k0 = 2 * np.pi * np.fft.fftfreq(m0, d=spacing)
    k1 = 2 * np.pi * np.fft.fftfreq(m1, d=spacing)
    K = np.sqrt(k0[:, None] ** 2 + k1[None, :] ** 2) ** order
    K[0, 0] = 0.0
    return np.real(np.fft.ifft2(F * K))[:n0, :n1]


def helgason_filter(f, d: int = 1, n: int = 2, pad: int = 2, periodic: bool = False,
                    spacing: float | None = None):
    """``(-Delta)^{d/2} f`` by FFT; returns the same type as ``f``.

    ``f`` is a :class:`~dfibration.transform.GridFunction` or a plain array
    (then ``spacing`` is required).
    """
    if n != 2:
        raise ValidationError("grids are two dimensional (n = 2)")
    if isinstance(f, tr.GridFunction):
        out = fractional_laplacian(f.values, f.spacing, d, pad, periodic)
        return tr.GridFunction(out, f.r_dom)
    if spacing is None:
        raise ValidationError("spacing is required for array input")
    return fractional_laplacian(f, spacing, d, pad, periodic)


@dataclass(frozen=True)
class InversionResult:
    reconstruction: tr.GridFunction
    normal: tr.GridFunction
    relative_error: float
    constant: float


def helgason_invert(f: tr.GridFunction, n_angles: int = 180, extend: int = 2,
                    q: tr.Quadrature | None = None) -> InversionResult:
    """``C^{-1} (-Delta)^{1/2} R^* R f`` for the line transform on ``f``'s grid.

    The sinogram is the standard ``n_angles x (2 n + 1)`` line grid of the
    disk.  ``R^* R f`` decays only like ``1/|x|`` outside the support, so the
    adjoint is evaluated on a grid ``extend`` times larger before filtering;
    the half-angle adjoint is divided by ``pi`` to average over directions.
    """
    n, r = f.n, f.r_dom
    if extend < 1 or (extend * n - n) % 2:
        raise ValidationError("extend must be a positive integer keeping the grid centred")
    q = q or tr.Quadrature(step=f.spacing / 4)
    big = EuclideanLines(extend * r)
    nb = extend * n
    theta = np.pi * np.arange(n_angles) / n_angles
    s = (r / n) * np.arange(-n, n + 1)
    P = tr.Projector(big, nb, q, axes=(theta, s))
    a = (nb - n) // 2
    fb_ = np.zeros((nb, nb))
    fb_[a:a + n, a:a + n] = f.values
    g = P.normal(tr.GridFunction(fb_, extend * r)).values / np.pi
    C = inversion_constant(1, 2)
    rec = fractional_laplacian(g, f.spacing, 1.0, pad=2)[a:a + n, a:a + n] / C
    rec_f = tr.GridFunction(rec, r)
    err = relative_error(rec_f, f)
    return InversionResult(rec_f, tr.GridFunction(g[a:a + n, a:a + n], r), err, C)


def relative_error(a: tr.GridFunction, b: tr.GridFunction) -> float:
    return float(np.linalg.norm(a.values - b.values) / np.linalg.norm(b.values))


# ---------------------------------------------------------------------------
# order probes

@dataclass(frozen=True)
class ProbeResult:
    slope: float
    intercept: float
    freqs: np.ndarray
    amplitudes: np.ndarray


def probe_function(n: int, r_dom: float, x0, xi0, freq: float, width: float):
    """``cos(2 pi freq (x - x0) . xi0 / L) exp(-|x - x0|^2 / (2 width^2))``, ``L = 2 r``."""
    x0 = np.asarray(x0, float)
    u = np.asarray(xi0, float)
    u = u / np.linalg.norm(u)
    L = 2 * r_dom

    def fn(p):
        d = p - x0
        return np.cos(2 * np.pi * freq * (d @ u) / L) * np.exp(-np.sum(d * d, -1) / (2 * width**2))

    return tr.GridFunction.from_function(fn, n, r_dom)


def conormal_line(spec, x0, xi0):
    """``(z, eta)``: the curve through ``x0`` conormal to ``xi0`` and the covector."""
    x0 = np.asarray(x0, float)
    xi = np.asarray(xi0, float)
    if spec.name == "lines":
        theta = float(np.arctan2(xi[1], xi[0]))
        return np.array([theta, x0 @ np.array([np.cos(theta), np.sin(theta)])]), xi
    if spec.name == "xray":
        z, _ = spec.geodesic_through(x0, np.array([-xi[1], xi[0]]))
        return z, xi
    raise ValidationError(f"no conormal curve construction for {spec.name}")


def check_no_conjugates(spec, x0, xi0, samples: int = 64):
    """Raise ``ConjugateContamination`` if ``pi_L`` collides for ``(x0, xi0)``."""
    z, eta = conormal_line(spec, x0, xi0)
    if spec.name == "lines":
        half = np.sqrt(max(spec.r_dom**2 - z[1] ** 2, 0.0))
        cands = np.linspace(-half, half, samples)
    else:
        cands = np.linspace(0.0, spec.path(z).tau, samples)
    hits = fb.pi_L_scan(spec, z, None, x0, eta, cands)
    if hits:
        raise ConjugateContamination(f"pi_L collides for x0={x0}: {[h[0] for h in hits]}")


def order_probe(spec, x0, xi0, freqs, operator="normal", n: int = 512, width: float | None = None,
                n_angles: int = 180, q: tr.Quadrature | None = None) -> ProbeResult:
    """Slope of ``log |(T f_lambda)(x0)|`` against ``log lambda`` for windowed cosines.

    ``operator`` is ``"normal"`` (``R^* R`` evaluated exactly at the pixel of
    ``x0`` from the rays that reach it), ``"identity"``, ``"filtered"``
    (``(-Delta)^{1/2} R^* R`` on the full grid) or a callable on grid
    functions.  ``width`` defaults to 8 pixels.
    """
    x0 = np.asarray(x0, float)
    r = spec.r_dom
    dx = 2 * r / n
    # centre the probe on a pixel so that evaluation at x0 is exact
    c = tr.grid_coords(n, r)
    x0 = np.array([c[np.argmin(np.abs(c - x0[0]))], c[np.argmin(np.abs(c - x0[1]))]])
    width = 8 * dx if width is None else width
    freqs = np.asarray(freqs, float)
    if isinstance(operator, str) and operator != "identity":
        check_no_conjugates(spec, x0, xi0)
    P = None
    if operator in ("normal", "filtered"):
        kw = {"n_angles": n_angles} if spec.name == "lines" else {}
        P = tr.projector(spec, n, q, **kw)
    i, j = (int(np.argmin(np.abs(c - x0[k])))for k in range(2))
    amps = []
    for lam in freqs:
        f = probe_function(n, r, x0, xi0, lam, width)
        if operator == "identity":
            val = f.values[i, j]
        elif operator == "normal":
            val = normal_at(P, f, x0)
        elif operator == "filtered":
            val = helgason_filter(P.normal(f)).values[i, j]
        elif callable(operator):
            val = operator(f).values[i, j]
        else:
            raise ValidationError(f"unknown probe operator {operator!r}")
        amps.append(abs(val))
    amps = np.asarray(amps)
    slope, icpt = np.polyfit(np.log(freqs), np.log(amps), 1)
    log.info("order probe (%s): slope %.4f", operator if isinstance(operator, str) else "custom",
             slope)
    return ProbeResult(float(slope), float(icpt), freqs, amps)


# ---------------------------------------------------------------------------
# conjugate-point artifacts

@dataclass(frozen=True)
class ArtifactPrediction:
    source: np.ndarray
    eta0: np.ndarray
    predicted: list = field(default_factory=list)  # (y, eta_tilde, z)
    degree: int = 1
    labels: list = field(default_factory=list)

    @property
    def points(self):
        return np.array([p[0] for p in self.predicted]).reshape(-1, 2)


def artifact_predict(spec, x0, eta0, dedup: float | None = None) -> ArtifactPrediction:
    """Points ``(y, eta~)`` linked to ``(x0, eta0)`` through a conjugate triplet.

    The curves through ``x0`` conormal to ``eta0`` are found for both
    orientations; every conjugate partner ``y`` of ``x0`` along them is
    emitted with ``eta~ = B(z, y) zeta``, ``zeta = A(z, x0) eta0''``.
    """
    x0 = np.asarray(x0, float)
    eta0 = np.asarray(eta0, float)
    if not np.any(eta0):
        raise ValidationError("eta0 must be nonzero")
    if spec.name == "lines":
        return ArtifactPrediction(x0, eta0)
    if spec.name != "xray":
        raise ValidationError(f"artifact prediction is not available for {spec.name}")
    dedup = 1e-3 * spec.r_dom if dedup is None else dedup
    out, labels = [], []
    tangent = np.array([-eta0[1], eta0[0]])
    for sign in (1.0, -1.0):
        z, tx = spec.geodesic_through(x0, sign * tangent)
        ch = spec.phi_chart(z, x0)
        eta_dd = ch.covector_to_local(eta0)[1]
        zeta = fb.a_map(spec, z, x0, eta_dd).covector
        for k, ty in enumerate(spec.conjugate_partners(z, tx)):
            y = spec.curve_point(z, ty)
            bch = spec.b_chart(z, y)
            zd = zeta[list(bch.idx_dprime)]
            eta_t = fb.b_map(spec, z, y, zd).covector
            if all(np.linalg.norm(y - p[0]) > dedup for p in out):
                out.append((y, eta_t, z))
                labels.append(f"{'+' if sign > 0 else '-'}{k}")
    return ArtifactPrediction(x0, eta0, out, 1, labels)


@dataclass(frozen=True)
class ArtifactMeasurement:
    centroid: np.ndarray
    distance: float
    distance_cells: float
    peak: float
    background: float
    response: tr.GridFunction
    residual: tr.GridFunction


def reference_scale(P: tr.Projector, P_ref: tr.Projector) -> float:
    """Ratio of the mean normal-matrix diagonals (inside the disk)."""
    d = P.normal_diagonal()
    d_ref = P_ref.normal_diagonal()
    m = tr.disk_mask(P.n, P.r_dom)
    return float(d[m].mean() / d_ref[m].mean())


def artifact_measure(spec, x0, prediction: ArtifactPrediction | None, n: int = 128,
                     amplitude: float = 1.0, exclude_cells: float = 12.0, ratio: float = 3.0,
                     rel_floor: float = 0.1,
                     reference=None, phantom: tr.GridFunction | None = None,
                     q: tr.Quadrature | None = None) -> ArtifactMeasurement:
    """Locate the strongest residual of ``R^* R`` applied to a point phantom at ``x0``.

    The no-conjugate reference is the flat metric on the same disk (the
    Euclidean instance of the same fibration), scaled by the ratio of mean
    normal-matrix diagonals.  The residual maximum outside ``exclude_cells``
    pixels of ``x0`` must exceed ``ratio`` times the median residual level
    and ``rel_floor * max|R^* R f|``.

    Raises:
        NoArtifactFound: if no residual maximum stands out.
    """
    from . import geometry as geo
    from .xray import GeodesicXRay

    x0 = np.asarray(x0, float)
    f = phantom if phantom is not None else tr.phantom("point", n, spec.r_dom, x0)
    f = f * amplitude
    kw = {"n_beta": n, "n_alpha": n} if spec.name == "xray" else {}
    qq = q or (tr.Quadrature("trapezoid") if spec.name == "xray" else None)
    P = tr.projector(spec, n, qq, **kw)
    g = P.normal(f)
    if reference is None:
        if spec.name == "xray":
            reference = GeodesicXRay(geo.euclidean(spec.r_dom), h=spec.h)
        else:
            reference = spec
    kw_ref = {"n_beta": n, "n_alpha": n} if reference.name == "xray" else {}
    P_ref = tr.projector(reference, n, qq, **kw_ref)
    g_ref = P_ref.normal(f)
    scale = reference_scale(P, P_ref) if reference is not spec else 1.0
    res = g.values - scale * g_ref.values
    pts = f.points
    mask = f.mask & (np.linalg.norm(pts - x0, axis=-1) > exclude_cells * f.spacing)
    absr = np.abs(res) * mask
    background = float(np.median(np.abs(res[mask])))
    peak_idx = np.unravel_index(np.argmax(absr), absr.shape)
    peak = float(absr[peak_idx])
    floor = rel_floor * float(np.max(np.abs(g.values)))
    if not (peak > ratio * background and peak > floor):
        raise NoArtifactFound(
            f"residual peak {peak:.3e} vs background {background:.3e} (floor {floor:.3e})"
        )
    # centroid of the connected bright region around the peak
    win = absr >= 0.5 * peak
    lab, _ = ndimage.label(win)
    region = lab == lab[peak_idx]
    wts = absr * region
    centroid = np.array([np.sum(wts * pts[..., 0]), np.sum(wts * pts[..., 1])]) / np.sum(wts)
    dist = np.inf
    if prediction is not None and len(prediction.predicted):
        dist = float(np.min(np.linalg.norm(prediction.points - centroid, axis=1)))
    return ArtifactMeasurement(centroid, dist, dist / f.spacing, peak, background, g,
                               tr.GridFunction(res, f.r_dom))
