"""Structural linear algebra of a double fibration given by local charts.

A fibration is a subclass of :class:`FibrationSpec` that can produce, near any
incidence point ``(z, x)``, a chart ``x'' = phi(z, x')`` and (optionally) a
chart ``z'' = b(x, z')``.  All operations here are chart-level computations:
conormal maps, conjugate-triplet classification, the ``H^lambda`` defect map,
Condition (H) and the Bolker diagnostics.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .charts import BChart, PhiChart, central_diff
from .errors import (
    ChartDomain,
    ConsistencyFailure,
    DependentLambda,
    DimensionError,
    NotIncident,
    OrthonormalizationFailure,
    RankDeficient,
)

log = logging.getLogger(__name__)

NOT_CONJUGATE = 0
INCIDENCE_TOL = 1e-8


class FibrationSpec:
    """Abstract double fibration ``Z ⊂ G × X`` with dimensions ``(N, n, n')``."""

    name = "abstract"
    has_curves = False

    def __init__(self, N: int, n: int, n_prime: int, rank_rtol: float = la.RANK_RTOL):
        if not (n_prime >= 1 and n - n_prime >= 1 and N >= n >= 2):
            raise DimensionError(
                f"need N + n > N + n' > N >= n >= 2, got N={N}, n={n}, n'={n_prime}"
            )
        self.N, self.n, self.n_prime = int(N), int(n), int(n_prime)
        self.rank_rtol = rank_rtol

    @property
    def n_dprime(self) -> int:
        return self.n - self.n_prime

    # -- to be provided by concrete fibrations
    def phi_chart(self, z, x) -> PhiChart:
        raise NotImplementedError

    def b_chart(self, z, x) -> BChart | None:
        return None

    def incidence(self, z, x) -> float:
        """Distance-like residual; zero on ``Z``."""
        raise NotImplementedError

    def kappa(self, z, x) -> float:
        return 1.0

    def is_incident(self, z, x, tol=INCIDENCE_TOL) -> bool:
        try:
            return self.incidence(z, x) <= tol
        except ChartDomain:
            return False

    def require_incident(self, z, x, tol=INCIDENCE_TOL):
        r = self.incidence(z, x)
        if not r <= tol:
            raise NotIncident(f"({z}, {x}) is not on Z (residual {r:.3e})")

    def describe(self) -> dict:
        return {"name": self.name, "N": self.N, "n": self.n, "n_prime": self.n_prime}


@dataclass(frozen=True)
class CotangentPoint:
    base: np.ndarray
    covector: np.ndarray


@dataclass(frozen=True)
class ConjugateReport:
    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v_dim: int
    degree: int  # 0 means not conjugate
    regular: bool | None = None
    condition_h_rank: int | None = None
    criteria: dict = field(default_factory=dict, compare=False)

    @property
    def conjugate(self) -> bool:
        return self.degree >= 1

    def with_(self, **kw) -> "ConjugateReport":
        d = dict(self.__dict__)
        d.update(kw)
        return ConjugateReport(**d)


# ---------------------------------------------------------------------------
# conormal maps

def _chart_phi_z(spec, z, x):
    chart = spec.phi_chart(z, x)
    xp, _ = chart.to_local(x)
    return chart, xp, chart.phi_z(np.asarray(z, float), xp)


def a_map(spec: FibrationSpec, z, x, eta_dd) -> CotangentPoint:
    """``zeta = -phi_z(z, x')^T eta''`` in ``N*_z H_x``."""
    chart, xp, pz = _chart_phi_z(spec, z, x)
    if la.numerical_rank(pz, spec.rank_rtol) < spec.n_dprime:
        raise RankDeficient(f"rank(phi_z) < n''={spec.n_dprime} at z={z}, x={x}")
    eta_dd = np.atleast_1d(np.asarray(eta_dd, dtype=float))
    return CotangentPoint(np.asarray(z, float), -pz.T @ eta_dd)


def b_map(spec: FibrationSpec, z, x, zeta_dd) -> CotangentPoint:
    """``eta = -b_x(x, z')^T zeta''`` in ``N*_x G_z``."""
    chart = spec.b_chart(z, x)
    if chart is None:
        raise ChartDomain(f"{spec.name} provides no b-chart")
    zp, _ = chart.split(z)
    bx = chart.b_x(np.asarray(x, float), zp)
    if la.numerical_rank(bx, spec.rank_rtol) < spec.n_dprime:
        raise RankDeficient(f"rank(b_x) < n''={spec.n_dprime} at z={z}, x={x}")
    zeta_dd = np.atleast_1d(np.asarray(zeta_dd, dtype=float))
    return CotangentPoint(np.asarray(x, float), -bx.T @ zeta_dd)


def conormal_zeta(spec, z, x, zeta_dd):
    """Full covector ``(-b_z'^T zeta'', zeta'')`` of ``N*_z H_x`` in ``z`` coordinates."""
    chart = spec.b_chart(z, x)
    zp, _ = chart.split(z)
    zeta_dd = np.atleast_1d(np.asarray(zeta_dd, dtype=float))
    return chart.join(-chart.b_zp(np.asarray(x, float), zp).T @ zeta_dd, zeta_dd)


def eta_dd_of(spec, z, x, eta):
    """Chart component ``eta''`` of a covector conormal to ``G_z`` at ``x``."""
    chart = spec.phi_chart(z, x)
    return chart.covector_to_local(eta)[1]


def tangent_kernel_residual(spec: FibrationSpec, z, x, step=1e-5) -> float:
    """Check ``T_z H_x = Ker A(z,x)^*``: ``|phi_z w| / |phi_z|`` over fitted tangents ``w``.

    Tangent directions of ``H_x`` at ``z`` are fitted by central differences
    of the curve ``s -> (z' + s e_j, b(x, z' + s e_j))``.
    """
    chart = spec.b_chart(z, x)
    if chart is None:
        raise ChartDomain(f"{spec.name} provides no b-chart")
    _, _, pz = _chart_phi_z(spec, z, x)
    zp, _ = chart.split(z)
    x = np.asarray(x, float)
    worst = 0.0
    for j in range(len(zp)):
        e = np.zeros(len(zp))
        e[j] = step
        zplus = chart.join(zp + e, chart.b(x, zp + e))
        zminus = chart.join(zp - e, chart.b(x, zp - e))
        w = (zplus - zminus) / (2 * step)
        w /= np.linalg.norm(w)
        worst = max(worst, float(np.linalg.norm(pz @ w) / np.linalg.norm(pz)))
    return worst


# ---------------------------------------------------------------------------
# conjugate triplets

def _rows_at(spec, z, x, y):
    spec.require_incident(z, x)
    spec.require_incident(z, y)
    _, _, pz = _chart_phi_z(spec, z, x)
    _, _, qz = _chart_phi_z(spec, z, y)
    return pz, qz


def v_space_dim(spec: FibrationSpec, z, x, y) -> int:
    """``dim V_z(x, y) = n'' - dim(rowspan phi_z ∩ rowspan psi_z)``."""
    pz, qz = _rows_at(spec, z, x, y)
    return spec.n_dprime - la.stacked_intersection_dim(pz, qz)


def _orth(cols, atol):
    """Orthonormal basis of a column span, absolute threshold (inputs are O(1))."""
    if cols.size == 0:
        return cols.reshape(cols.shape[0], 0)
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    return u[:, s > atol]


def _criteria(spec, pz, qz):
    """Three independent degree computations from the two row blocks."""
    nd, N, rt = spec.n_dprime, spec.N, spec.rank_rtol
    # (1) V_z(x, y) = phi_z(Ker psi_z), intersection of row spans
    k_v = la.stacked_intersection_dim(pz, qz)
    # (2) N*_z H_x ∩ N*_z H_y = Ran A(z,x) ∩ Ran A(z,y) as column spans
    U = la.row_basis(pz, rt).T
    W = la.row_basis(qz, rt).T
    k_n = U.shape[1] + W.shape[1] - la.sum_dim(U, W, rt)
    # (3) rank of A(z,y)^* ∘ (A(z,x)^*|N_zH_x)^{-1}, with N_z H_x realized as a
    # complement of Ker A(z,x)^* built from Ker A(z,y)^* and (Ker_x + Ker_y)^perp
    phat, qhat = U.T, W.T
    Kx = la.null_space(phat, rt)
    Ky = la.null_space(qhat, rt)
    Kcap = la.null_space(np.vstack([phat, qhat]), rt)
    Wy = _orth(Ky - Kcap @ (Kcap.T @ Ky), rt)
    C = la.complement_basis(_orth(np.hstack([Kx, Ky]), rt), N)
    Bmat = np.hstack([Wy, C])
    if Bmat.shape[1] != nd:
        k_m = -1
    else:
        M = qhat @ Bmat @ np.linalg.inv(phat @ Bmat)
        k_m = la.numerical_rank(M, rtol=rt, atol=rt)
    return {"v_space": k_v, "conormal_intersection": k_n, "composed_rank": k_m}


def classify_triplet(spec: FibrationSpec, z, x, y) -> ConjugateReport:
    """Degree of ``(z; x, y)`` cross-validated by three criteria.

    Raises:
        ConsistencyFailure: if the criteria disagree at the rank threshold.
    """
    if spec.N < 2 * spec.n_dprime:
        raise DimensionError("classification needs N >= 2 n''")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.allclose(x, y, atol=1e-12):
        raise NotIncident("classification needs x != y")
    pz, qz = _rows_at(spec, z, x, y)
    crit = _criteria(spec, pz, qz)
    ks = set(crit.values())
    if len(ks) != 1:
        raise ConsistencyFailure(f"degree criteria disagree: {crit}")
    k = ks.pop()
    return ConjugateReport(
        z=np.asarray(z, float), x=x, y=y, v_dim=spec.n_dprime - k, degree=k, criteria=crit
    )


def report_rows(reports):
    for r in reports:
        yield {
            **{f"z{i + 1}": v for i, v in enumerate(r.z)},
            **{f"x{i + 1}": v for i, v in enumerate(r.x)},
            **{f"y{i + 1}": v for i, v in enumerate(r.y)},
            "v_dim": r.v_dim,
            "degree": r.degree,
            "regular": "" if r.regular is None else int(r.regular),
            "h_rank": "" if r.condition_h_rank is None else r.condition_h_rank,
        }


def write_reports_csv(path, reports):
    rows = list(report_rows(reports))
    if not rows:
        with open(path, "w") as fh:
            fh.write("v_dim,degree,regular,h_rank\n")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# H^lambda and Condition (H)

@dataclass(frozen=True)
class TripletCharts:
    """Charts ``phi`` near ``(z0, x0)`` and ``psi`` near ``(z0, y0)``."""

    phi: PhiChart
    psi: PhiChart
    z0: np.ndarray
    xp0: np.ndarray
    yp0: np.ndarray

    def pack(self, z, xp, yp):
        return np.concatenate([np.atleast_1d(z), np.atleast_1d(xp), np.atleast_1d(yp)])

    def unpack(self, p):
        N = self.z0.size
        a = self.xp0.size
        return p[:N], p[N:N + a], p[N + a:]

    @property
    def base(self):
        return self.pack(self.z0, self.xp0, self.yp0)


def triplet_charts(spec: FibrationSpec, z, x, y) -> TripletCharts:
    z = np.asarray(z, float)
    phi = spec.phi_chart(z, x)
    psi = spec.phi_chart(z, y)
    return TripletCharts(phi, psi, z, phi.to_local(x)[0], psi.to_local(y)[0])


def _check_lambda(Lambda, nd):
    L = np.atleast_2d(np.asarray(Lambda, dtype=float))
    if L.shape[1] != nd:
        raise DependentLambda(f"Lambda rows must have length n''={nd}")
    if la.numerical_rank(L, rtol=1e-10) < L.shape[0]:
        raise DependentLambda("rows of Lambda are linearly dependent")
    return L


def h_lambda(spec: FibrationSpec, z, x_prime, y_prime, Lambda, charts: TripletCharts):
    """``H^{lambda_l} = lambda_l phi_z (I - psi~^T psi~) phi_z^T lambda_l^T`` for each row."""
    L = _check_lambda(Lambda, spec.n_dprime)
    z = np.asarray(z, float)
    pz = charts.phi.phi_z(z, x_prime)
    qz = charts.psi.phi_z(z, y_prime)
    try:
        qt = la.gram_schmidt(qz)
    except np.linalg.LinAlgError as exc:
        raise OrthonormalizationFailure("psi_z is rank deficient") from exc
    P = np.eye(spec.N) - qt.T @ qt
    rows = L @ pz
    return np.einsum("li,ij,lj->l", rows, P, rows)


def h_lambda_at(spec, z, x, y, Lambda):
    ch = triplet_charts(spec, z, x, y)
    return h_lambda(spec, ch.z0, ch.xp0, ch.yp0, Lambda, ch)


def vanishing_lambdas(spec: FibrationSpec, z, x, y, rtol=1e-6):
    """Orthonormal rows spanning ``{lambda : H^lambda(z, x', y') = 0}``.

    These are the combinations with ``lambda phi_z(x)`` inside the row span
    of ``psi_z(y)``; their number is the degree of the triplet.
    """
    pz, qz = _rows_at(spec, z, x, y)
    Q = la.null_space(la.row_basis(qz, spec.rank_rtol), spec.rank_rtol)
    M = pz @ Q  # (n'', N - n'')
    scale = np.linalg.norm(pz, 2)
    u, s, _ = np.linalg.svd(M, full_matrices=True)
    s = np.concatenate([s, np.zeros(u.shape[0] - s.size)])
    return u[:, s <= rtol * scale].T


def h_lambda_min(spec: FibrationSpec, z, x, y) -> float:
    """``min H^lambda`` over unit ``lambda`` after orthonormalizing ``phi_z`` rows.

    Zero (up to rounding) exactly when some ``H^lambda`` vanishes, i.e. when
    the triplet is conjugate; equals ``sin^2`` of the smallest principal angle.
    """
    pz, qz = _rows_at(spec, z, x, y)
    ph = la.gram_schmidt(pz)
    qt = la.gram_schmidt(qz)
    P = np.eye(spec.N) - qt.T @ qt
    return float(np.linalg.eigvalsh(ph @ P @ ph.T)[0])


def _root_map(spec, charts, Lambda, Q0):
    """Smooth square root of ``H^lambda``: ``r_l = Q^T phi_z^T lambda_l^T``.

    ``Q`` is an orthonormal frame of ``Ker psi_z`` transported from ``Q0``
    by projection, so ``H^{lambda_l} = |r_l|^2`` and ``D r`` is generically
    nonzero on the zero set where ``D H^lambda`` itself vanishes.
    """

    def r(p):
        z, xp, yp = charts.unpack(p)
        pz = charts.phi.phi_z(z, xp)
        qt = la.gram_schmidt(charts.psi.phi_z(z, yp))
        Q = Q0 - qt.T @ (qt @ Q0)
        Q, R = np.linalg.qr(Q)
        Q = Q * np.sign(np.diag(R))
        return (Lambda @ pz @ Q).ravel()

    return r


def condition_h_check(spec: FibrationSpec, z, x, y, k: int, trials: int = 16,
                      rng=None, return_details=False):
    """Numerical rank of the differential of the conjugacy defect map.

    ``Lambda`` is drawn as ``M L`` with ``M`` a random invertible ``k x k``
    matrix and ``L`` the rows of :func:`vanishing_lambdas`, so that
    ``H^Lambda`` vanishes at the triplet.  ``H^lambda`` is a sum of squares
    and its own gradient vanishes on its zero set, so the rank is taken for
    the square-root map of :func:`_root_map`, whose squared norm is
    ``H^lambda``.  The Jacobian in ``(z, x', y')`` is formed by central
    differences and its rank taken at ``1e-6 sigma_max`` with an absolute
    floor ``1e-6 |phi_z|``.

    Returns ``(max_rank, passes)`` with ``passes`` true iff every rank is 1.
    """
    rng = np.random.default_rng(rng)
    ch = triplet_charts(spec, z, x, y)
    L = vanishing_lambdas(spec, z, x, y)
    if L.shape[0] < k:
        raise ConsistencyFailure(
            f"only {L.shape[0]} vanishing combinations for a degree-{k} triplet"
        )
    L = L[:k]
    scale = np.linalg.norm(ch.phi.phi_z(ch.z0, ch.xp0))
    Q0 = la.null_space(la.gram_schmidt(ch.psi.phi_z(ch.z0, ch.yp0)))
    ranks = []
    for _ in range(trials):
        while True:
            M = rng.standard_normal((k, k))
            if la.numerical_rank(M, 1e-10) == k:
                break
        J = central_diff(_root_map(spec, ch, M @ L, Q0), ch.base)
        J = J.reshape(-1, ch.base.size)
        ranks.append(la.numerical_rank(J, rtol=1e-6, atol=1e-6 * scale))
    log.info("condition (H): %d Lambda draws, ranks %s", trials, sorted(set(ranks)))
    result = (max(ranks), all(r == 1 for r in ranks))
    if return_details:
        return result, ranks
    return result


# ---------------------------------------------------------------------------
# Bolker diagnostics

def bolker_rank(spec: FibrationSpec, z, x, eta_dd):
    """Rank of ``[phi_z^T, d_x'(phi_z^T eta'')]``; immersive iff it equals ``n``.

    When the fibration has a b-chart, the dual rank condition
    ``[b_x^T, d_z'(b_x^T zeta'')]`` is evaluated at the corresponding
    ``zeta = A(z, x) eta`` and must give the same verdict.
    """
    z = np.asarray(z, float)
    x = np.asarray(x, float)
    eta_dd = np.atleast_1d(np.asarray(eta_dd, dtype=float))
    if not np.any(eta_dd):
        raise RankDeficient("eta'' must be nonzero")
    chart = spec.phi_chart(z, x)
    xp, _ = chart.to_local(x)
    pz = chart.phi_z(z, xp)
    d2 = chart.phi_z_xp(z, xp)  # (n'', N, n')
    M = np.hstack([pz.T, np.einsum("i,ija->ja", eta_dd, d2)])
    rank = la.numerical_rank(M, spec.rank_rtol)
    immersive = rank == spec.n

    bch = spec.b_chart(z, x)
    if bch is not None:
        zeta = -pz.T @ eta_dd
        zp, _ = bch.split(z)
        zeta_dd = zeta[list(bch.idx_dprime)]
        bx = bch.b_x(x, zp)
        bxz = bch.b_x_zp(x, zp)  # (n'', n, N - n'')
        Md = np.hstack([bx.T, np.einsum("i,ija->ja", zeta_dd, bxz)])
        rank_d = la.numerical_rank(Md, spec.rank_rtol)
        if (rank_d == spec.n) != immersive:
            raise ConsistencyFailure(
                f"Bolker immersion criteria disagree: rank(c)={rank}, rank(d)={rank_d}"
            )
    return rank, immersive


def _pairing(spec, eta_dd, pz, qz):
    """``eta(V_z(x, y))`` as the row ``eta''^T phi_z Ker(psi_z)``, normalized.

    With ``N = 2`` and ``n'' = 1`` the kernel is oriented as the rotated
    unit row of ``psi_z`` so the value is a continuous signed scalar.
    """
    row = eta_dd @ pz
    if spec.N == 2 and spec.n_dprime == 1:
        q = qz[0] / np.linalg.norm(qz[0])
        K = np.array([[-q[1]], [q[0]]])
    else:
        K = la.null_space(la.row_basis(qz, spec.rank_rtol), spec.rank_rtol)
    return (row @ K) / (np.linalg.norm(row) + 1e-300)


def pi_L_scan(spec: FibrationSpec, z, zeta, x, eta, candidates, tol=1e-8, refine=True):
    """Sampled points ``y != x`` of ``G_z`` where ``pi_L`` fails to be injective.

    ``candidates`` are curve parameters (for fibrations with ``has_curves``)
    or points of ``G_z``.  A candidate collides when ``eta(V_z(x, y)) = {0}``
    at threshold ``tol``.  With ``refine`` and ordered 1-parameter candidates
    (N = 2 n'' so the pairing is a signed scalar), sign changes between
    neighbouring candidates are bisected and the refined points are tested too.

    Returns a list of ``(y, eta_tilde)`` with ``eta_tilde = B(z, y) zeta``
    expressed as a global covector at ``y``; ``zeta=None`` means
    ``zeta = A(z, x) eta''``.
    """
    z = np.asarray(z, float)
    x = np.asarray(x, float)
    spec.require_incident(z, x)
    cand = np.asarray(candidates, dtype=float)
    chart = spec.phi_chart(z, x)
    xp, _ = chart.to_local(x)
    pz = chart.phi_z(z, xp)
    eta_dd = chart.covector_to_local(eta)[1]
    if zeta is None:
        zeta = -pz.T @ eta_dd

    param = spec.has_curves and cand.ndim == 1
    point = (lambda t: spec.curve_point(z, t)) if param else (lambda p: np.asarray(p, float))

    def pairing(c):
        y = point(c)
        qz = spec.phi_chart(z, y).phi_z(z, spec.phi_chart(z, y).to_local(y)[0])
        return _pairing(spec, eta_dd, pz, qz)

    tried = []
    vals = []
    for c in cand:
        y = point(c)
        if np.linalg.norm(y - x) < 1e-9:
            continue
        tried.append(c)
        vals.append(pairing(c))

    scalar = param and spec.N == 2 * spec.n_dprime and spec.n_dprime == 1
    if refine and scalar and len(tried) > 1:
        order = np.argsort(tried)
        ts = np.asarray(tried)[order]
        vs = np.asarray([v[0] for v in vals])[order]
        extra = []
        for i in range(len(ts) - 1):
            if np.sign(vs[i]) != np.sign(vs[i + 1]) and vs[i] != 0:
                lo, hi, flo = ts[i], ts[i + 1], vs[i]
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    fm = pairing(mid)[0]
                    if np.sign(fm) == np.sign(flo):
                        lo, flo = mid, fm
                    else:
                        hi = mid
                    if hi - lo < 1e-13:
                        break
                extra.append(0.5 * (lo + hi))
        for c in extra:
            if np.linalg.norm(point(c) - x) > 1e-9:
                tried.append(c)
                vals.append(pairing(c))

    out = []
    for c, v in zip(tried, vals):
        if np.all(np.abs(v) <= tol):
            y = point(c)
            eta_t = None
            bch = spec.b_chart(z, y)
            if bch is not None:
                zd = np.asarray(zeta, float)[list(bch.idx_dprime)]
                eta_t = -bch.b_x(y, bch.split(z)[0]).T @ zd
            out.append((y, eta_t))
    # collapse duplicates from refinement
    uniq = []
    for y, e in out:
        if all(np.linalg.norm(y - u[0]) > 1e-7 for u in uniq):
            uniq.append((y, e))
    return uniq


# ---------------------------------------------------------------------------
# regularity

def _signed_defect(pz, qz):
    """``det [phi^_z; psi^_z]`` of the orthonormalized rows (square case)."""
    return np.linalg.det(np.vstack([la.gram_schmidt(pz), la.gram_schmidt(qz)]))


def find_conjugate_y(spec, charts, z, xp, yp_center, radius, direction=None, samples=41):
    """Conjugate partners ``y'`` of ``(z, x')`` on a segment through ``yp_center``.

    Works in the ``psi`` chart of ``charts``; sign changes of the signed
    defect (N = 2 n'') are bisected.  Returns a list of ``y'`` vectors.
    """
    if spec.N != 2 * spec.n_dprime:
        return _find_conjugate_y_minimize(spec, charts, z, xp, yp_center, radius, direction, samples)
    d = np.ones(spec.n_prime) if direction is None else np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    pz = charts.phi.phi_z(z, xp)

    def f(s):
        return _signed_defect(pz, charts.psi.phi_z(z, yp_center + s * d))

    ss = np.linspace(-radius, radius, samples)
    fs = np.array([f(s) for s in ss])
    out = []
    for i in range(samples - 1):
        if fs[i] == 0.0:
            out.append(yp_center + ss[i] * d)
        elif np.sign(fs[i]) != np.sign(fs[i + 1]):
            lo, hi, flo = ss[i], ss[i + 1], fs[i]
            while hi - lo > 1e-13 * max(1.0, radius):
                mid = 0.5 * (lo + hi)
                fm = f(mid)
                if np.sign(fm) == np.sign(flo):
                    lo, flo = mid, fm
                else:
                    hi = mid
            out.append(yp_center + 0.5 * (lo + hi) * d)
    return out


def _find_conjugate_y_minimize(spec, charts, z, xp, yp_center, radius, direction, samples):
    from scipy.optimize import minimize_scalar

    d = np.ones(spec.n_prime) if direction is None else np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    pz = charts.phi.phi_z(z, xp)

    def f(s):
        c = la.principal_cosines(pz, charts.psi.phi_z(z, yp_center + s * d))
        return 1.0 - c[0]

    ss = np.linspace(-radius, radius, samples)
    fs = np.array([f(s) for s in ss])
    out = []
    for i in range(1, samples - 1):
        if fs[i] <= fs[i - 1] and fs[i] <= fs[i + 1]:
            res = minimize_scalar(f, bounds=(ss[i - 1], ss[i + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            if res.fun < 1e-12:
                out.append(yp_center + res.x * d)
    return out


def triplet_degree_local(spec, charts, z, xp, yp):
    pz = charts.phi.phi_z(z, xp)
    qz = charts.psi.phi_z(z, yp)
    return la.stacked_intersection_dim(pz, qz)


def regularity_probe(spec: FibrationSpec, report: ConjugateReport, radii, samples: int = 64,
                     rng=None) -> bool:
    """Probe whether all conjugate triplets near ``report`` share its degree.

    Random ``(z~, x~')`` are drawn in boxes of half-widths ``r_z, r_x``; for
    each, conjugate partners ``y'`` within ``r_y`` of ``y0'`` are located by
    a sign-change (or minimum) search in the ``psi`` chart.  A non-conjugate
    report is regular iff no conjugate triplet is found.
    """
    rng = np.random.default_rng(rng)
    r_z, r_x, r_y = radii
    ch = triplet_charts(spec, report.z, report.x, report.y)
    k = report.degree
    found = 0
    ok = True
    for _ in range(samples):
        z = ch.z0 + r_z * rng.uniform(-1, 1, ch.z0.size)
        xp = ch.xp0 + r_x * rng.uniform(-1, 1, ch.xp0.size)
        direction = None if spec.n_prime == 1 else rng.standard_normal(spec.n_prime)
        for yp in find_conjugate_y(spec, ch, z, xp, ch.yp0, r_y, direction):
            found += 1
            if triplet_degree_local(spec, ch, z, xp, yp) != k:
                ok = False
    log.info("regularity probe: %d samples, %d conjugate triplets found", samples, found)
    return ok


def conjugate_set_dimension(spec, report, radius=1e-3, samples=60, rng=None, sv_rtol=1e-3):
    """Local PCA dimension of the zero set ``{H^lambda = 0}`` near ``report``.

    Points of the set are produced by drawing ``(z, x', y')`` in a small box
    and moving ``y'`` along a fixed direction onto the set; the dimension is
    the number of principal components above ``sv_rtol`` of the largest
    (curvature contributes only at second order in ``radius``).
    """
    rng = np.random.default_rng(rng)
    ch = triplet_charts(spec, report.z, report.x, report.y)
    d = np.zeros(spec.n_prime)
    d[0] = 1.0
    pts = []
    for _ in range(samples):
        z = ch.z0 + radius * rng.uniform(-1, 1, ch.z0.size)
        xp = ch.xp0 + radius * rng.uniform(-1, 1, ch.xp0.size)
        yc = ch.yp0 + radius * rng.uniform(-1, 1, ch.yp0.size) * (1 - d)
        ys = find_conjugate_y(spec, ch, z, xp, yc, 20 * radius, d, samples=9)
        if ys:
            yp = min(ys, key=lambda q: np.linalg.norm(q - ch.yp0))
            pts.append(ch.pack(z, xp, yp))
    P = np.asarray(pts)
    s = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    return int(np.sum(s > sv_rtol * s[0])), len(pts)
