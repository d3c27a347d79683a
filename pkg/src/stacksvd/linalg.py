"""Dense linear algebra helpers.

Small problems go straight to LAPACK. Large ones use ARPACK's Lanczos
iteration through :func:`scipy.sparse.linalg.svds`, which only needs
matrix-vector products; that also lets a weighted stack of tables be
decomposed without materializing the stacked matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, svds

from .errors import ConvergenceFailure, NotSymmetric, RankTooLarge, ShapeMismatch

__all__ = [
    "SvdTriplet",
    "DENSE_THRESHOLD",
    "truncated_svd",
    "stacked_truncated_svd",
    "gram_truncated_svd",
    "gram_svd",
    "sym_eig",
    "haar_orthonormal",
    "as_generator",
]

#: min(n, d) at or below which the dense LAPACK path is always used.
DENSE_THRESHOLD = 512
#: relative residual tolerance handed to ARPACK.
LANCZOS_TOL = 1e-10


@dataclass(frozen=True)
class SvdTriplet:
    """Leading singular triplets: ``s`` descending, ``u`` (n x k), ``v`` (d x k)."""

    s: np.ndarray
    u: np.ndarray
    v: np.ndarray


def as_generator(seed) -> np.random.Generator:
    """Accept an int, ``SeedSequence``, ``Generator`` or ``None``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _dense_svd(A, k):
    U, s, Vt = scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesdd")
    return SvdTriplet(s[:k].copy(), U[:, :k].copy(), Vt[:k].T.copy())


def _lanczos(op, shape, k, tol, maxiter):
    n, d = shape
    # fixed start vector keeps results reproducible
    v0 = np.random.default_rng(0x5EED).standard_normal(min(n, d))
    try:
        U, s, Vt = svds(op, k=k, tol=tol, v0=v0, maxiter=maxiter, solver="arpack")
    except ArpackNoConvergence as exc:
        raise ConvergenceFailure(f"Lanczos did not converge: {exc}") from exc
    order = np.argsort(s)[::-1]
    return SvdTriplet(s[order], U[:, order], Vt[order].T)


def truncated_svd(
    matrix,
    k: int = 1,
    *,
    dense_threshold: Optional[int] = None,
    tol: float = LANCZOS_TOL,
    maxiter: Optional[int] = None,
) -> SvdTriplet:
    """Leading ``k`` singular triplets of a dense matrix.

    Parameters
    ----------
    matrix : array_like, shape (n, d)
    k : int
        Number of triplets, ``1 <= k <= min(n, d)``.
    dense_threshold : int, optional
        Defaults to the module setting :data:`DENSE_THRESHOLD`. Use a full LAPACK decomposition when ``min(n, d)`` is at or below
        this size, or when ``k`` is too close to ``min(n, d)`` for Lanczos.

    Raises
    ------
    RankTooLarge
        If ``k`` is out of range.
    ConvergenceFailure
        If the iterative solver hits its iteration cap.
    """
    dense_threshold = DENSE_THRESHOLD if dense_threshold is None else dense_threshold
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2:
        raise ShapeMismatch("truncated_svd expects a 2-d matrix")
    n, d = A.shape
    if not 1 <= k <= min(n, d):
        raise RankTooLarge(f"k={k} outside [1, {min(n, d)}]")
    if min(n, d) <= dense_threshold or k >= min(n, d) - 1:
        return _dense_svd(A, k)
    return _lanczos(A, A.shape, k, tol, maxiter)


class _StackOperator(LinearOperator):
    """``[w_1 X_1; ...; w_m X_m]`` as a linear operator."""

    def __init__(self, blocks, weights):
        self.blocks = list(blocks)
        self.weights = np.asarray(weights, dtype=float)
        self.offsets = np.cumsum([0] + [B.shape[0] for B in self.blocks])
        d = self.blocks[0].shape[1]
        super().__init__(dtype=np.float64, shape=(int(self.offsets[-1]), d))

    def _matvec(self, x):
        x = np.ravel(x)
        return np.concatenate([w * (B @ x) for B, w in zip(self.blocks, self.weights)])

    def _matmat(self, X):
        return np.vstack([w * (B @ X) for B, w in zip(self.blocks, self.weights)])

    def _rmatvec(self, y):
        y = np.ravel(y)
        out = np.zeros(self.shape[1])
        for B, w, a, b in zip(self.blocks, self.weights, self.offsets[:-1], self.offsets[1:]):
            out += w * (y[a:b] @ B)
        return out

    def _rmatmat(self, Y):
        out = np.zeros((self.shape[1], Y.shape[1]))
        for B, w, a, b in zip(self.blocks, self.weights, self.offsets[:-1], self.offsets[1:]):
            out += w * (B.T @ Y[a:b])
        return out


def stacked_truncated_svd(
    blocks: Sequence[np.ndarray],
    weights,
    k: int = 1,
    *,
    dense_threshold: Optional[int] = None,
    tol: float = LANCZOS_TOL,
    maxiter: Optional[int] = None,
) -> SvdTriplet:
    """Truncated SVD of the weighted vertical stack of ``blocks``.

    Equivalent to ``truncated_svd(np.vstack([w_i X_i]), k)`` but the stack
    is only formed on the dense path.
    """
    dense_threshold = DENSE_THRESHOLD if dense_threshold is None else dense_threshold
    blocks = [np.asarray(B, dtype=float) for B in blocks]
    weights = np.asarray(weights, dtype=float)
    if len(blocks) != len(weights):
        raise ShapeMismatch("one weight per block is required")
    d = blocks[0].shape[1]
    if any(B.shape[1] != d for B in blocks):
        raise ShapeMismatch("all blocks must have the same number of columns")
    n = sum(B.shape[0] for B in blocks)
    if not 1 <= k <= min(n, d):
        raise RankTooLarge(f"k={k} outside [1, {min(n, d)}]")
    if len(blocks) == 1 and weights[0] == 1.0:
        return truncated_svd(blocks[0], k, dense_threshold=dense_threshold, tol=tol, maxiter=maxiter)
    if min(n, d) <= dense_threshold or k >= min(n, d) - 1:
        A = np.vstack([w * B for B, w in zip(blocks, weights)])
        return _dense_svd(A, k)
    return _lanczos(_StackOperator(blocks, weights), (n, d), k, tol, maxiter)


def gram_truncated_svd(
    gram,
    k: int = 1,
    *,
    dense_threshold: Optional[int] = None,
    tol: float = LANCZOS_TOL,
    maxiter: Optional[int] = None,
) -> SvdTriplet:
    """Leading right singular triplets of ``X`` from its Gram matrix ``X^T X``.

    Useful when several weighted stacks of the same tables are needed:
    the Gram matrix of ``[w_1 X_1; ...]`` is ``sum_i w_i^2 X_i^T X_i``.
    Left vectors are not available on this path and ``u`` is ``None``.
    """
    dense_threshold = DENSE_THRESHOLD if dense_threshold is None else dense_threshold
    G = np.asarray(gram, dtype=float)
    d = G.shape[0]
    if G.ndim != 2 or G.shape[1] != d:
        raise ShapeMismatch("gram must be square")
    if not 1 <= k <= d:
        raise RankTooLarge(f"k={k} outside [1, {d}]")
    if d <= dense_threshold or k >= d - 1:
        evals, evecs = scipy.linalg.eigh(G, subset_by_index=[d - k, d - 1])
    else:
        v0 = np.random.default_rng(0x5EED).standard_normal(d)
        try:
            evals, evecs = eigsh(G, k=k, which="LA", tol=tol, v0=v0, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            raise ConvergenceFailure(f"Lanczos did not converge: {exc}") from exc
    order = np.argsort(evals)[::-1]
    s = np.sqrt(np.clip(evals[order], 0.0, None))
    return SvdTriplet(s, None, evecs[:, order])


def gram_svd(matrix, k: int = 1, *, dense_threshold: Optional[int] = None) -> SvdTriplet:
    """Leading singular triplets through the smaller Gram matrix.

    Forming ``X^T X`` (or ``X X^T``) is a single BLAS-3 call, and the
    symmetric eigensolver that follows is usually faster than Lanczos on
    ``X`` itself. Squaring loses accuracy only for singular values near
    ``sqrt(eps) * sigma_1``, far below anything the leading triplets need.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2:
        raise ShapeMismatch("gram_svd expects a 2-d matrix")
    n, d = A.shape
    if not 1 <= k <= min(n, d):
        raise RankTooLarge(f"k={k} outside [1, {min(n, d)}]")
    if n >= d:
        t = gram_truncated_svd(A.T @ A, k, dense_threshold=dense_threshold)
        s, v = t.s, t.v
        u = (A @ v) / np.where(s > 0, s, 1.0)
    else:
        t = gram_truncated_svd(A @ A.T, k, dense_threshold=dense_threshold)
        s, u = t.s, t.v
        v = (A.T @ u) / np.where(s > 0, s, 1.0)
    return SvdTriplet(s, u, v)


def sym_eig(matrix, *, atol: float = 1e-10):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns
    -------
    evals : ndarray, shape (m,)
    evecs : ndarray, shape (m, m)
        Orthonormal columns matching ``evals``.

    Raises
    ------
    NotSymmetric
        If ``max |A - A^T| > atol``.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatch("sym_eig expects a square matrix")
    if A.size and np.max(np.abs(A - A.T)) > atol:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    evals, evecs = np.linalg.eigh(A)
    # eigh is ascending; a stable reversal keeps ties in input order
    order = np.argsort(-evals, kind="stable")
    return evals[order], evecs[:, order]


def haar_orthonormal(d: int, r: int, seed=None) -> np.ndarray:
    """Haar-distributed ``d x r`` matrix with orthonormal columns.

    QR of a standard Gaussian matrix, with the signs of ``diag(R)`` folded
    into ``Q`` so the distribution is exactly invariant.
    """
    if r > d or r < 1:
        raise RankTooLarge(f"cannot draw {r} orthonormal columns in dimension {d}")
    rng = as_generator(seed)
    G = rng.standard_normal((d, r))
    Q, R = np.linalg.qr(G)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s
