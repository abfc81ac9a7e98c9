"""Thresholded linear algebra: numerical rank, kernels, subspace intersections."""

import numpy as np

RANK_RTOL = 1e-6
INTERSECTION_TOL = 1e-8


def numerical_rank(a, rtol=RANK_RTOL, atol=0.0):
    """Number of singular values above ``max(atol, rtol * sigma_max)``.

    A matrix whose largest singular value is below ``atol`` has rank 0.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] <= atol or s[0] == 0.0:
        return 0
    return int(np.sum(s > max(atol, rtol * s[0])))


def null_space(a, rtol=RANK_RTOL):
    """Orthonormal basis (columns) of the numerical kernel of ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    _, s, vh = np.linalg.svd(a)
    r = 0 if s.size == 0 or s[0] == 0 else int(np.sum(s > rtol * s[0]))
    return vh[r:].T.copy()


def row_basis(a, rtol=RANK_RTOL):
    """Orthonormal basis (rows) of the row space of ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    _, s, vh = np.linalg.svd(a, full_matrices=False)
    r = 0 if s.size == 0 or s[0] == 0 else int(np.sum(s > rtol * s[0]))
    return vh[:r].copy()


def gram_schmidt(rows, tol=1e-10):
    """Modified Gram-Schmidt on the rows of ``rows``.

    Raises ``np.linalg.LinAlgError`` if a row is dependent on its
    predecessors at relative level ``tol``.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    out = np.zeros_like(rows)
    scale = max(np.max(np.linalg.norm(rows, axis=1)), np.finfo(float).tiny)
    for i, r in enumerate(rows):
        w = r.copy()
        for j in range(i):
            w -= (out[j] @ w) * out[j]
        nw = np.linalg.norm(w)
        if nw <= tol * scale:
            raise np.linalg.LinAlgError(f"row {i} is dependent")
        out[i] = w / nw
    return out


def principal_cosines(u_rows, w_rows):
    """Cosines of the principal angles between two row spans (descending)."""
    qu = row_basis(u_rows)
    qw = row_basis(w_rows)
    if qu.shape[0] == 0 or qw.shape[0] == 0:
        return np.zeros(0)
    return np.clip(np.linalg.svd(qu @ qw.T, compute_uv=False), 0.0, 1.0)


def stacked_intersection_dim(u_rows, w_rows, tol=INTERSECTION_TOL):
    """Dimension of ``rowspan(u) ∩ rowspan(w)`` from the stacked basis.

    The singular values of the stacked orthonormal bases are
    ``sqrt(1 ± cos(theta_i))``; each one equal to ``sqrt(2)`` within ``tol``
    counts a common direction.
    """
    qu = row_basis(u_rows)
    qw = row_basis(w_rows)
    s = np.linalg.svd(np.vstack([qu, qw]), compute_uv=False)
    return int(np.sum(np.abs(s - np.sqrt(2.0)) <= tol))


def sum_dim(u_cols, w_cols, rtol=RANK_RTOL):
    """Dimension of ``span(u) + span(w)`` for column bases."""
    return numerical_rank(np.hstack([u_cols, w_cols]), rtol=rtol)


def intersection_basis(u_cols, w_cols, cos_tol=1e-6):
    """Orthonormal basis of ``span(u) ∩ span(w)`` (columns, orthonormal inputs)."""
    if u_cols.shape[1] == 0 or w_cols.shape[1] == 0:
        return np.zeros((u_cols.shape[0], 0))
    uu, s, _ = np.linalg.svd(u_cols.T @ w_cols)
    k = int(np.sum(s >= 1.0 - cos_tol))
    return u_cols @ uu[:, :k]


def complement_basis(sub_cols, ambient_dim):
    """Orthonormal basis of the orthogonal complement of ``span(sub)``."""
    if sub_cols.shape[1] == 0:
        return np.eye(ambient_dim)
    return null_space(sub_cols.T)
