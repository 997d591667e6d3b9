"""Sparse Cholesky factorisation with a fill-reducing ordering.

SuperLU is run in symmetric mode with diagonal pivoting disabled, which for a
symmetric positive definite input produces a genuine Cholesky factorisation of
a fill-reducing symmetric permutation of the matrix:

    A[ix, :][:, ix] = L L^T,   ix = argsort(perm_c).

Solves go through the compiled SuperLU back end; sampling needs only one
triangular solve, done densely below ``dense_cutoff`` (small factors are much
faster through LAPACK than through sparse triangular code).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import splu, spsolve_triangular

from .errors import NumericalError

_DENSE_CUTOFF = 512


class SparseCholesky:
    """Cholesky factor of a sparse symmetric positive definite matrix.

    Supports ``solve(b)`` for A x = b and ``sample(mean, rng)`` for draws
    from N(mean, A^-1). Instances are immutable after construction and safe
    to share across threads.
    """

    def __init__(self, matrix, dense_cutoff: int = _DENSE_CUTOFF):
        a = matrix if sp.issparse(matrix) and matrix.format == "csc" else sp.csc_matrix(matrix)
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        self.n = a.shape[0]
        try:
            self._lu = splu(
                a,
                diag_pivot_thresh=0.0,
                permc_spec="MMD_AT_PLUS_A",
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # SuperLU signals singularity this way
            raise NumericalError(f"sparse factorisation failed: {exc}") from exc
        if not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise NumericalError("symmetric factorisation produced unequal permutations")
        diag = self._lu.U.diagonal()
        if not np.all(diag > 0.0):
            raise NumericalError("matrix is not positive definite")
        self._log_det = float(np.sum(np.log(diag)))
        # the Cholesky factor of the permuted matrix is L*sqrt(diag(U));
        # its transpose shares the csc index structure reinterpreted as csr
        lower = self._lu.L
        scale = np.repeat(np.sqrt(diag), np.diff(lower.indptr))
        upper = sp.csr_matrix(
            (lower.data * scale, lower.indices, lower.indptr), shape=lower.shape
        )
        self._perm = np.asarray(self._lu.perm_c)
        if self.n <= dense_cutoff:
            self._upper_dense = upper.toarray()
            self._upper_sparse = None
        else:
            self._upper_dense = None
            self._upper_sparse = upper

    @property
    def log_det(self) -> float:
        """log det A."""
        return self._log_det

    def solve(self, b):
        """Solve A x = b for one right-hand side."""
        return self._lu.solve(np.asarray(b, dtype=np.float64))

    def _half_solve(self, z):
        """Return w with Cov(w[perm]) = A^-1 for z ~ N(0, I)."""
        if self._upper_dense is not None:
            return solve_triangular(self._upper_dense, z, lower=False)
        return spsolve_triangular(self._upper_sparse, z, lower=False)

    def sample(self, mean, rng, size: int | None = None):
        """Draw from N(mean, A^-1); ``mean=None`` means the zero vector.

        With ``size`` given, returns an (size, n) array of independent draws.
        """
        if size is None:
            z = rng.standard_normal(self.n)
            out = self._half_solve(z)[self._perm]
            return out if mean is None else out + mean
        z = rng.standard_normal((self.n, size))
        out = self._half_solve(z)[self._perm].T
        return out if mean is None else out + mean
