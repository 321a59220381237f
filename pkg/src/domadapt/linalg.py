"""Symmetric-matrix numerics: covariance estimates, eigendecomposition and
matrix fractional powers.

Everything here is a pure function of its inputs and returns bitwise
identical output for identical input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientDataError,
    NotPSDError,
    NumericalError,
    SingularMatrixError,
    ValidationError,
)

SYMMETRY_RTOL = 1e-9
PSD_RTOL = 1e-10
SINGULAR_RTOL = 1e-12
SIGN_ATOL = 1e-12


@dataclass(frozen=True)
class CovarianceStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class EigenDecomposition:
    """``vectors[:, i]`` is the eigenvector for ``values[i]``; values descend."""

    vectors: np.ndarray
    values: np.ndarray

    def reconstruct(self, values=None):
        """P diag(values) P^T, by default with the decomposition's own values."""
        values = self.values if values is None else np.asarray(values, dtype=np.float64)
        return _symmetrize((self.vectors * values) @ self.vectors.T)


def _symmetrize(m):
    return 0.5 * (m + m.T)


def _canonical_rows(x):
    # lexicographic row order makes the summation order independent of the
    # order rows were supplied in
    order = np.lexsort(x.T[::-1])
    return x[order]


def estimate_covariance(x) -> CovarianceStats:
    """Mean and unbiased (N-1) sample covariance of the rows of ``x``.

    ``x`` may be an ``EmbeddingSet`` or an (N, D) array. The result does not
    depend on the order of the rows, bit for bit.
    """
    x = getattr(x, "vectors", x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"expected an (N, D) matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise InsufficientDataError(f"covariance needs at least 2 samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite value in covariance input")
    x = _canonical_rows(x)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = _symmetrize(xc.T @ xc / (n - 1))
    return CovarianceStats(mean=mean, cov=cov, count=n)


def check_symmetric(m, rtol=SYMMETRY_RTOL):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.max(np.abs(m - m.T), initial=0.0) > rtol * scale:
        raise ValidationError("matrix is not symmetric")
    return _symmetrize(m)


def sym_eig(m) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix.

    Eigenvalues are returned in descending order. Each eigenvector's sign
    is fixed so that its first entry with magnitude above 1e-12 is
    positive, which makes the output unique outside degenerate subspaces.

    Raises
    ------
    ValidationError
        If ``m`` is not square, finite and symmetric to 1e-9 relative.
    NumericalError
        If the underlying LAPACK solver does not converge.
    """
    m = check_symmetric(m)
    try:
        values, vectors = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition did not converge: {exc}") from None
    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()
    significant = np.abs(vectors) > SIGN_ATOL
    first = np.argmax(significant, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    vectors *= signs
    return EigenDecomposition(vectors=vectors, values=values)


def clamp_psd(values, what="matrix"):
    """Zero out round-off negatives in a descending spectrum; reject real ones."""
    values = np.asarray(values, dtype=np.float64)
    top = max(values[0], 0.0) if values.size else 0.0
    if values.size and values[-1] < -PSD_RTOL * top:
        raise NotPSDError(f"{what} has eigenvalue {values[-1]:.3e} (largest {top:.3e})")
    return np.maximum(values, 0.0)


def sym_power(m, p, ridge=0.0):
    """Return ``(m + ridge * I) ** p`` for a symmetric PSD matrix ``m``.

    The power is taken on the eigenvalues, ``P diag((s + ridge) ** p) P^T``.
    Eigenvalues in ``[-1e-10 * s_max, 0)`` are treated as round-off and set
    to zero before the ridge is added.

    Raises
    ------
    NotPSDError
        An eigenvalue is more negative than the round-off allowance.
    SingularMatrixError
        ``p < 0`` and the smallest regularized eigenvalue is not above
        ``1e-12`` times the largest.
    """
    if ridge < 0 or not np.isfinite(ridge):
        raise ValidationError(f"ridge must be a non-negative number, got {ridge}")
    eig = m if isinstance(m, EigenDecomposition) else sym_eig(m)
    s = clamp_psd(eig.values) + ridge
    if p < 0:
        top = s[0] if s.size else 0.0
        if not s.size or top <= 0 or s[-1] <= SINGULAR_RTOL * top:
            raise SingularMatrixError(
                f"cannot raise a singular matrix to power {p} "
                f"(eigenvalues {s[-1] if s.size else 0:.3e} .. {top:.3e}, ridge {ridge})"
            )
    return eig.reconstruct(s ** p)


def condition_number(values):
    values = np.asarray(values, dtype=np.float64)
    if values[-1] <= 0:
        return np.inf
    return values[0] / values[-1]
