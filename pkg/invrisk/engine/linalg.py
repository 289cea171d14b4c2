"""
Dense linear algebra substrate: thin SVD, truncated pseudoinverse, projections
"""
import logging

import numpy as np
import scipy.linalg

from invrisk.errors import NumericError, RankError, ShapeError
from invrisk.model.tensor_model import SvdBundle

log = logging.getLogger("invrisk")

# relative to sigma_1; reciprocals of smaller singular values are not trusted
SVD_TOLERANCE = 1e-12


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected a non empty matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non finite entries")
    return a


def svd(a) -> SvdBundle:
    """
    Thin SVD with d = min(p, m) triplets. Each right singular vector is
    signed so that its largest-magnitude entry is positive.

    :param a: p x m matrix
    :return: the decomposition
    """
    a = _as_matrix(a)
    try:
        u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver='gesdd')
    except np.linalg.LinAlgError:
        log.debug("gesdd did not converge on %s, retrying with gesvd", a.shape)
        try:
            u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver='gesvd')
        except np.linalg.LinAlgError as e:
            raise NumericError(f"SVD did not converge on a {a.shape} matrix") from e
    pivots = np.argmax(np.abs(vt), axis=1)
    signs = np.where(vt[np.arange(vt.shape[0]), pivots] < 0, -1.0, 1.0)
    return SvdBundle(u * signs, s, vt * signs[:, None])


def effective_rank(s: SvdBundle, tol: float = SVD_TOLERANCE) -> int:
    """
    Number of singular values above tol * sigma_1
    """
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tolerance must be in (0, 1), got {tol}")
    if s.d == 0 or s.sigma[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s.sigma > tol * s.sigma[0]))


def truncated_pinv(s: SvdBundle, k: int, tol: float = SVD_TOLERANCE) -> np.ndarray:
    """
    Best rank-k approximation of the Moore-Penrose inverse, V_k diag(1/sigma_k) U_k^T

    :param s: decomposition of a p x m matrix
    :param k: rank, 0 <= k <= effective rank
    :return: m x p matrix
    """
    if not 0 <= k <= s.d:
        raise ValueError(f"rank {k} out of range [0, {s.d}]")
    rank = effective_rank(s, tol)
    if k > rank:
        raise RankError(k, rank)
    return (s.vt[:k].T / s.sigma[:k]) @ s.u[:, :k].T


def project(basis_rows, v) -> np.ndarray:
    """
    Coordinates of v along each basis row
    """
    basis_rows = np.asarray(basis_rows, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if basis_rows.ndim != 2 or v.ndim != 1 or basis_rows.shape[1] != v.size:
        raise ShapeError(f"cannot project a vector of length {v.size} on rows of shape {basis_rows.shape}")
    return basis_rows @ v
