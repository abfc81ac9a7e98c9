import numpy as np
import pytest
from math import gamma, pi, sqrt
from scipy.ndimage import map_coordinates
from scipy.optimize import brentq

import oracles
from dfibration import geometry as geo
from dfibration import normal as nm
from dfibration import transform as tr
from dfibration.errors import (ConjugateContamination, NoArtifactFound, PaddingTooSmall,
                               ValidationError)
from dfibration.xray import GeodesicXRay


# -- normal operator

@pytest.mark.parametrize("n", [32, 48])
def test_matrix_symmetric_psd(lines, n):
    A = nm.NormalOperator(lines, n).matrix()
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.max(np.abs(A))
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert ev[0] >= -1e-10 * ev[-1]


def test_xray_matrix_symmetric_psd(fxray):
    op = nm.NormalOperator(fxray, 24, tr.Quadrature("trapezoid"), n_beta=24)
    A = op.matrix()
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.max(np.abs(A))
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert ev[0] >= -1e-10 * ev[-1]


def test_apply_equals_matrix(lines, rng):
    op = nm.NormalOperator(lines, 32)
    f = tr.GridFunction(rng.standard_normal((32, 32)))
    ref = op.matrix() @ f.values.ravel()
    assert np.max(np.abs(op(f).values.ravel() - ref)) <= 1e-12 * np.max(np.abs(ref))
    assert np.allclose(nm.normal_apply(lines, f).values, op(f).values, rtol=0, atol=1e-14)


def test_matrix_size_limit(lines):
    with pytest.raises(ValidationError):
        nm.NormalOperator(lines, 128).matrix()


def test_normal_zero_and_symmetry(lines, rng):
    assert np.all(nm.normal_apply(lines, tr.GridFunction.zeros(32)).values == 0)
    f = tr.GridFunction(rng.standard_normal((32, 32)))
    g = tr.GridFunction(rng.standard_normal((32, 32)))
    a = nm.normal_apply(lines, f).inner(g)
    b = f.inner(nm.normal_apply(lines, g))
    assert abs(a - b) <= 1e-10 * f.norm() * g.norm()


def test_pixel_value_matches_full_normal(lines, rng):
    P = tr.projector(lines, 64)
    f = tr.GridFunction(rng.standard_normal((64, 64)))
    full = P.normal(f)
    for x0 in [(0.1, 0.05), (-0.4, 0.3), (0.0, -0.7)]:
        i, j = (int((x0[k] + 1) / f.spacing) for k in range(2))
        assert nm.normal_at(P, f, x0) == pytest.approx(full.values[i, j], rel=1e-10, abs=1e-12)


def test_radial_output(lines):
    n = 128
    g = nm.normal_apply(lines, tr.phantom("gaussian", n)).values
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    for r in (0.1, 0.3, 0.5):
        idx = (np.stack([r * np.cos(ang), r * np.sin(ang)]) + 1) / (2 / n) - 0.5
        ring = map_coordinates(g, idx, order=3)
        assert np.ptp(ring) <= 1e-3 * g.max()


# -- Helgason filter

def test_constants():
    assert nm.helgason_constant_printed(1, 2) == pytest.approx(4 * sqrt(pi))
    assert nm.inversion_constant(1, 2) == pytest.approx(2.0)
    assert nm.inversion_constant(2, 3) == pytest.approx(4 * pi * gamma(1.5) / gamma(0.5))


def test_filter_zero_and_plane_wave():
    n, h = 64, 2.0 / 64
    z = nm.helgason_filter(np.zeros((n, n)), spacing=h, periodic=True)
    assert np.all(z == 0)
    k = 2 * np.pi / (n * h) * np.array([3.0, -5.0])
    w = oracles.grid_plane_wave(n, h, k)
    out = nm.helgason_filter(w, spacing=h, periodic=True)
    assert np.max(np.abs(out - np.linalg.norm(k) * w)) <= 1e-8 * np.linalg.norm(k)
    out2 = nm.helgason_filter(w, d=2, spacing=h, periodic=True)
    assert np.max(np.abs(out2 - np.linalg.norm(k) ** 2 * w)) <= 1e-8 * np.linalg.norm(k) ** 2


def test_filter_padding_checks():
    with pytest.raises(PaddingTooSmall):
        nm.helgason_filter(np.ones((8, 8)), spacing=0.1, pad=1)
    with pytest.raises(PaddingTooSmall):
        nm.fractional_laplacian(np.ones((8, 8)), 0.1, pad=1.5)
    with pytest.raises(ValidationError):
        nm.helgason_filter(np.ones((8, 8)))
    g = tr.GridFunction(np.ones((16, 16)))
    assert isinstance(nm.helgason_filter(g), tr.GridFunction)


def test_filter_dc_is_removed():
    out = nm.fractional_laplacian(np.ones((16, 16)), 0.1, periodic=True)
    assert np.max(np.abs(out)) <= 1e-12


def test_inversion_small_grid():
    res = nm.helgason_invert(tr.phantom("gaussian", 64))
    assert res.constant == 2.0
    assert res.relative_error <= 0.05


def test_printed_constant_does_not_invert():
    """Using (4 pi)^d G(n/2) / G((n-1)/2) instead of 2 misses by its ratio."""
    res = nm.helgason_invert(tr.phantom("gaussian", 64))
    f = tr.phantom("gaussian", 64)
    scaled = res.reconstruction * (res.constant * np.pi / nm.helgason_constant_printed(1, 2))
    assert nm.relative_error(scaled, f) > 0.1


def test_invert_validates_extend():
    with pytest.raises(ValidationError):
        nm.helgason_invert(tr.phantom("gaussian", 16), extend=0)


# -- order probes

FREQS = np.array([8.0, 16.0, 32.0, 64.0])


def test_probe_identity(lines):
    r = nm.order_probe(lines, (0.1, 0.05), (1, 0.3), FREQS, operator="identity")
    assert abs(r.slope) <= 0.05


def test_probe_lines_normal(lines):
    r = nm.order_probe(lines, (0.1, 0.05), (1, 0.3), FREQS)
    assert abs(r.slope + 1) <= 0.15


def test_probe_filtered(lines):
    r = nm.order_probe(lines, (0.1, 0.05), (1, 0.3), [4.0, 8.0, 16.0], operator="filtered",
                       n=128)
    assert abs(r.slope) <= 0.15


def test_probe_callable(lines):
    r = nm.order_probe(lines, (0.0, 0.0), (1, 0), [8.0, 16.0], operator=lambda f: f * 2.0, n=64)
    assert abs(r.slope) <= 0.05
    with pytest.raises(ValidationError):
        nm.order_probe(lines, (0.0, 0.0), (1, 0), [8.0, 16.0], operator="bogus", n=64)


def test_probe_contamination(fxray, diametral):
    z, x, _, tx, _ = diametral
    v = fxray.path(z).state(tx)[1]
    xi = np.array([-v[1], v[0]])
    with pytest.raises(ConjugateContamination):
        nm.order_probe(fxray, x, xi, FREQS)


# -- artifacts

X0 = np.array([-0.55, 0.0])


def test_predict_lines_empty(lines):
    assert nm.artifact_predict(lines, X0, (0, 1)).predicted == []


def test_predict_matches_jacobi_locus(fxray, focusing):
    pred = nm.artifact_predict(fxray, X0, (0, 1))
    assert len(pred.predicted) >= 1
    st = geo.PhasePoint((-1.0, 0.0), focusing.unit(np.array([-1.0, 0.0]), (1, 0)))
    # time of x0 along the diameter, from the oracle integrator
    tx = brentq(lambda t: oracles.state_at(focusing, st.x, st.v, t)[0][0] - X0[0], 0.05, 1.0)
    partners = oracles.conjugate_partners(focusing, st.x, st.v, tx, fxray.h)
    ys = [oracles.state_at(focusing, st.x, st.v, t)[0] for t in partners]
    for y, eta_t, _ in pred.predicted:
        assert min(np.linalg.norm(y - q) for q in ys) <= 1e-3
        assert abs(eta_t[0]) <= 1e-6 * np.linalg.norm(eta_t)  # conormal to the axis


def test_predict_conic(fxray):
    a = nm.artifact_predict(fxray, X0, (0, 1)).points
    b = nm.artifact_predict(fxray, X0, (0, 3.5)).points
    assert np.allclose(a, b, atol=1e-9)
    with pytest.raises(ValidationError):
        nm.artifact_predict(fxray, X0, (0, 0))


def test_measure_linearity(fxray):
    pred = nm.artifact_predict(fxray, X0, (0, 1))
    m1 = nm.artifact_measure(fxray, X0, pred, n=64)
    m10 = nm.artifact_measure(fxray, X0, pred, n=64, amplitude=10.0)
    assert np.linalg.norm(m1.centroid - m10.centroid) <= m1.response.spacing
    assert m1.distance_cells <= 3


def test_measure_lines_none(lines):
    with pytest.raises(NoArtifactFound):
        nm.artifact_measure(lines, X0, nm.artifact_predict(lines, X0, (0, 1)), n=64)


def test_measure_flat_xray_none():
    spec = GeodesicXRay(geo.euclidean())
    with pytest.raises(NoArtifactFound):
        nm.artifact_measure(spec, X0, None, n=32)
