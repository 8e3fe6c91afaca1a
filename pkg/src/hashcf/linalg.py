"""Shared dense/sparse matrix kernels.

Everything in here is a pure function of its inputs: truncated SVD of a
sparse matrix, a symmetric-eigendecomposition Sylvester solver, the
orthogonal Procrustes solution, trailing eigenvectors of a Gram matrix,
and PCA with a reusable projection basis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, svds

from .errors import NumericError, ParameterError, SingularityError

# Ridge added to near-singular denominators; guards matrices like one-hot
# Gram products that are structurally rank-deficient.
RIDGE = 1e-6

# Engage the ridge only when an eigenvalue-pair sum is this small relative
# to the largest one; well-conditioned systems are solved exactly.
RIDGE_TRIGGER = 1e-7

_SVD_SEED = 0x5EED


@dataclass(frozen=True)
class TruncatedSvd:
    """Rank-``o`` factors of a (sparse) matrix.

    ``left`` is n x o with orthonormal columns, ``singulars`` holds the o
    largest singular values in descending order, ``right`` is o x m with
    orthonormal rows.
    """

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray
    source_shape: tuple[int, int]

    @property
    def rank(self) -> int:
        return self.singulars.shape[0]

    def reconstruct(self) -> np.ndarray:
        """Dense best rank-o approximation (test/toy sizes only)."""
        return (self.left * self.singulars) @ self.right

    def squared_frobenius(self) -> float:
        """Frobenius norm squared of the rank-o approximation."""
        return float(np.sum(self.singulars**2))


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalues (ascending) with orthonormal eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True)
class PcaBasis:
    """Mean vector and principal directions for re-projecting new columns.

    ``components`` is k x d; projecting a column x computes
    ``components @ (x - mean)``.
    """

    mean: np.ndarray
    components: np.ndarray

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def project(self, X) -> np.ndarray:
        """Project d x n columns onto the retained components."""
        X = _as_2d(X)
        if X.shape[0] != self.mean.shape[0]:
            raise ParameterError(
                f"feature dimension {X.shape[0]} does not match basis "
                f"dimension {self.mean.shape[0]}"
            )
        if sp.issparse(X):
            out = self.components @ X
            out -= np.outer(self.components @ self.mean, np.ones(X.shape[1]))
            return np.asarray(out)
        return self.components @ (X - self.mean[:, None])


def _as_2d(M):
    if sp.issparse(M):
        return M
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ParameterError(f"expected a 2-d matrix, got ndim={M.ndim}")
    return M


def truncated_svd(M, o: int, maxiter: int | None = None) -> TruncatedSvd:
    """Best rank-``o`` factorization of a sparse (or dense) matrix.

    Unobserved entries are exact zeros.  Uses an iterative Lanczos solver
    when ``o < min(n, m)`` and a dense decomposition when the full rank is
    requested (toy sizes).

    Raises
    ------
    ParameterError
        ``o`` outside ``1..min(n, m)`` or ``M`` entirely zero.
    NumericError
        The iterative solver did not converge; carries the iteration count.
    """
    M = _as_2d(M)
    n, m = M.shape
    if not (1 <= o <= min(n, m)):
        raise ParameterError(f"svd rank o={o} must be in 1..min{(n, m)}")
    nnz = M.nnz if sp.issparse(M) else np.count_nonzero(M)
    if nnz == 0:
        raise ParameterError("matrix has no nonzero entries")

    if o == min(n, m):
        dense = M.toarray() if sp.issparse(M) else M
        U, s, Vt = np.linalg.svd(dense, full_matrices=False)
        return TruncatedSvd(U[:, :o], s[:o], Vt[:o], (n, m))

    if not sp.issparse(M):
        M = sp.csr_matrix(M)
    v0 = np.random.default_rng(_SVD_SEED).standard_normal(min(n, m))
    if maxiter is None:
        maxiter = max(1000, 10 * min(n, m))
    try:
        U, s, Vt = svds(M, k=o, v0=v0, maxiter=maxiter)
    except ArpackNoConvergence as exc:
        raise NumericError(
            f"truncated SVD did not converge within {maxiter} iterations",
            iterations=maxiter,
        ) from exc
    except ArpackError as exc:
        raise NumericError(f"truncated SVD failed: {exc}", iterations=maxiter) from exc
    order = np.argsort(s)[::-1]
    return TruncatedSvd(
        np.ascontiguousarray(U[:, order]),
        np.ascontiguousarray(s[order]),
        np.ascontiguousarray(Vt[order]),
        (n, m),
    )


def _check_symmetric(M: np.ndarray, name: str, tol: float = 1e-10) -> np.ndarray:
    if M.shape[0] != M.shape[1]:
        raise ParameterError(f"{name} must be square, got {M.shape}")
    if M.size and np.max(np.abs(M - M.T)) > tol * max(1.0, np.max(np.abs(M))):
        raise ParameterError(f"{name} is not symmetric within {tol}")
    return 0.5 * (M + M.T)


def solve_sylvester(A, Bm, C) -> np.ndarray:
    """Solve ``A @ W + W @ Bm = C`` for symmetric PSD ``A`` (r x r) and
    ``Bm`` (d x d).

    Both coefficients are eigendecomposed and the rotated right-hand side
    is divided entrywise by the eigenvalue-pair sums.  Well-conditioned
    systems are solved exactly; when the smallest pair sum is negligible a
    ridge of ``RIDGE`` per coefficient is folded into the denominators.

    Raises
    ------
    SingularityError
        An eigenvalue-pair sum stays below 1e-12 even after the ridge.
    """
    A = _check_symmetric(np.asarray(A, dtype=np.float64), "A")
    Bm = _check_symmetric(np.asarray(Bm, dtype=np.float64), "Bm")
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (A.shape[0], Bm.shape[0]):
        raise ParameterError(
            f"C must be {(A.shape[0], Bm.shape[0])}, got {C.shape}"
        )

    lam, U = np.linalg.eigh(A)
    nu, V = np.linalg.eigh(Bm)
    denom = lam[:, None] + nu[None, :]
    pair_min = lam[0] + nu[0]
    pair_max = lam[-1] + nu[-1]
    if pair_min <= RIDGE_TRIGGER * max(1.0, abs(pair_max)):
        denom = denom + 2.0 * RIDGE
        if denom.min() < 1e-12:
            raise SingularityError(
                f"eigenvalue-pair sum {denom.min():.3e} below 1e-12 after ridge"
            )
    return U @ ((U.T @ C @ V) / denom) @ V.T


def orthogonal_procrustes(C) -> np.ndarray:
    """Orthogonal matrix maximizing ``tr(R.T @ C)``.

    Returns ``P @ Q.T`` from the singular value decomposition
    ``C = P diag(s) Q.T``.
    """
    C = np.asarray(C, dtype=np.float64)
    if not np.all(np.isfinite(C)):
        raise ParameterError("Procrustes input contains non-finite entries")
    P, _, Qt = np.linalg.svd(C)
    return P @ Qt


def trailing_eigvecs(G, count: int) -> np.ndarray:
    """Orthonormal eigenvectors of symmetric ``G`` for its ``count``
    smallest eigenvalues, as columns.

    ``count=0`` returns an r x 0 matrix (penalty disabled).
    """
    G = _check_symmetric(np.asarray(G, dtype=np.float64), "G")
    r = G.shape[0]
    if not (0 <= count <= r):
        raise ParameterError(f"count={count} must be in 0..{r}")
    if count == 0:
        return np.empty((r, 0))
    _, vecs = np.linalg.eigh(G)
    return np.ascontiguousarray(vecs[:, :count])


def pca_reduce(X, target_dim: int) -> tuple[np.ndarray, PcaBasis]:
    """Project the columns of a d x n matrix onto its top principal
    components after mean-centering the rows (no whitening).

    A ``target_dim`` exceeding ``min(d, n)`` is clipped to it with a
    warning.  Returns the target_dim x n projections and the basis for
    projecting unseen columns.
    """
    X = _as_2d(X)
    d, n = X.shape
    if target_dim < 1:
        raise ParameterError(f"target_dim={target_dim} must be positive")
    cap = min(d, n)
    if target_dim > cap:
        warnings.warn(
            f"pca target_dim={target_dim} exceeds min(d, n)={cap}; clipping"
        )
        target_dim = cap

    if sp.issparse(X):
        mean = np.asarray(X.mean(axis=1)).ravel()
    else:
        mean = X.mean(axis=1)

    # Dense path is exact and cheap at small sizes or full rank; the
    # matrix-free path avoids densifying a centered wide sparse matrix.
    if target_dim >= cap or min(d, n) <= 600:
        Xc = (X.toarray() if sp.issparse(X) else X) - mean[:, None]
        U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
        U, s, Vt = U[:, :target_dim], s[:target_dim], Vt[:target_dim]
    else:
        U, s, Vt = _centered_svds(X, mean, target_dim)

    # Fix component signs so repeated fits agree: largest-|entry| positive.
    flip = np.where(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])] < 0, -1.0, 1.0)
    U = U * flip
    Y = (s * flip)[:, None] * Vt
    return Y, PcaBasis(mean=mean, components=np.ascontiguousarray(U.T))


def _centered_svds(X, mean, k):
    d, n = X.shape
    ones_n = np.ones(n)

    def matvec(v):
        v = np.ravel(v)
        return X @ v - mean * v.sum()

    def rmatvec(u):
        u = np.ravel(u)
        return X.T @ u - ones_n * float(mean @ u)

    op = LinearOperator((d, n), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)
    v0 = np.random.default_rng(_SVD_SEED).standard_normal(min(d, n))
    try:
        U, s, Vt = svds(op, k=k, v0=v0)
    except (ArpackNoConvergence, ArpackError) as exc:
        raise NumericError(f"pca svd failed: {exc}") from exc
    order = np.argsort(s)[::-1]
    return U[:, order], s[order], Vt[order]
