"""Feature-based unsupervised domain adaptation of embeddings.

Three estimators map out-of-domain (training) embeddings towards the
second-order statistics of unlabeled in-domain data:

* :func:`coral_fit` - correlation alignment: whiten with the out-of-domain
  covariance, re-color with the in-domain one, both regularized by ``+I``.
* :func:`fda_fit` - feature-distribution adaptor: mean adaptation, then
  re-coloring restricted to directions where the in-domain data has *more*
  variance than the out-of-domain data (eigenvalues of the relative
  covariance floored at 1).
* :func:`coralpp_fit` - correlation alignment in which the in-domain
  eigenvalue spectrum is z-score normalized and floored at ``alpha`` before
  the in-domain covariance is rebuilt, and both covariances get a ``lambda``
  ridge.

All transforms use the row-vector convention ``x_hat = (x - pre_shift) @ A
+ post_shift``.

Note that the z-scored spectrum used by CORAL++ is O(1) whatever the scale of
the input covariance, so adapted embeddings are globally rescaled. That is
harmless for the usual back-end, which length-normalizes downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .embedio import EmbeddingSet
from .errors import DegenerateSpectrumError, ParseError, SingularMatrixError, ValidationError
from .linalg import (
    EigenDecomposition,
    condition_number,
    estimate_covariance,
    sym_eig,
    sym_power,
)

METHODS = ("identity", "coral", "fda", "coralpp")
_METHOD_TAGS = {name: i for i, name in enumerate(METHODS)}
TRANSFORM_MAGIC = b"ADT1"

DEFAULT_LAMBDA = 0.1
DEFAULT_ALPHA = 0.5

# fDA only regularizes C_O when it is this ill-conditioned
FDA_RIDGE_TRIGGER = 1e10
FDA_RIDGE_REL = 1e-6
FDA_MAX_CONDITION = 1e12
# spectra whose spread is below this (relative to the largest magnitude)
# are round-off around a single value
SPECTRUM_SPREAD_RTOL = 1e-12


@dataclass(frozen=True)
class CoralPPConfig:
    """Hyper-parameters of CORAL++.

    lambda_ : ridge added to both covariances, must be > 0.
    alpha : floor applied to the z-scored in-domain spectrum, must be >= 0.
    """

    lambda_: float = DEFAULT_LAMBDA
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        lam, alpha = float(self.lambda_), float(self.alpha)
        if not np.isfinite(lam) or lam <= 0:
            raise ValidationError(f"lambda must be positive, got {self.lambda_}")
        if not np.isfinite(alpha) or alpha < 0:
            raise ValidationError(f"alpha must be non-negative, got {self.alpha}")
        object.__setattr__(self, "lambda_", lam)
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class EigSpectrum:
    """In-domain spectrum as seen by CORAL++ at each processing step."""

    raw: np.ndarray
    normalized: np.ndarray
    floored: np.ndarray
    alpha: float
    mean: float
    std: float
    vectors: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class AdaptationTransform:
    matrix: np.ndarray
    pre_shift: np.ndarray
    post_shift: np.ndarray
    method: str = "identity"
    lambda_: float = float("nan")
    alpha: float = float("nan")
    spectrum: Optional[EigSpectrum] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
            raise ValidationError(f"transform matrix must be square, got shape {matrix.shape}")
        d = matrix.shape[0]
        pre = np.array(self.pre_shift, dtype=np.float64).reshape(-1)
        post = np.array(self.post_shift, dtype=np.float64).reshape(-1)
        if pre.shape[0] != d or post.shape[0] != d:
            raise ValidationError("shift vectors must match the matrix dimension")
        if not (np.all(np.isfinite(matrix)) and np.all(np.isfinite(pre)) and np.all(np.isfinite(post))):
            raise ValidationError("transform has non-finite entries")
        if self.method not in _METHOD_TAGS:
            raise ValidationError(f"unknown adaptation method {self.method!r}")
        for arr in (matrix, pre, post):
            arr.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "pre_shift", pre)
        object.__setattr__(self, "post_shift", post)

    @property
    def dim(self):
        return self.matrix.shape[0]


def identity_transform(dim) -> AdaptationTransform:
    zeros = np.zeros(dim)
    return AdaptationTransform(matrix=np.eye(dim), pre_shift=zeros, post_shift=zeros, method="identity")


def _check_pair(ood: EmbeddingSet, ind: EmbeddingSet):
    if ood.dim != ind.dim:
        raise ValidationError(f"dimension mismatch: out-of-domain D={ood.dim}, in-domain D={ind.dim}")


def coral_fit_exact(ood: EmbeddingSet, ind: EmbeddingSet, ridge=0.0, *, method="coral") -> AdaptationTransform:
    """Closed-form minimizer of ``||A^T C_O A - C_I||_F``.

    Returns ``A = (C_O + ridge I)^{-1/2} (C_I + ridge I)^{1/2}``. With
    ``ridge=0`` this is the exact solution and requires a positive definite
    ``C_O``; ``ridge=1`` is the standard CORAL regularization.
    """
    _check_pair(ood, ind)
    c_o = estimate_covariance(ood).cov
    c_i = estimate_covariance(ind).cov
    whiten = sym_power(c_o, -0.5, ridge)
    recolor = sym_power(c_i, 0.5, ridge)
    zeros = np.zeros(ood.dim)
    return AdaptationTransform(matrix=whiten @ recolor, pre_shift=zeros, post_shift=zeros, method=method)


def coral_fit(ood: EmbeddingSet, ind: EmbeddingSet) -> AdaptationTransform:
    """CORAL with the identity regularizer, ``(C_O + I)^{-1/2} (C_I + I)^{1/2}``."""
    return coral_fit_exact(ood, ind, ridge=1.0)


def fda_fit(ood: EmbeddingSet, ind: EmbeddingSet) -> AdaptationTransform:
    """Feature-distribution adaptor.

    Each domain is centered on its own mean and adapted vectors are moved to
    the in-domain mean. With ``C_O^{-1/2} C_I C_O^{-1/2} = P D P^T`` and
    ``D' = max(1, D)``, the column-vector map is
    ``C_O^{1/2} P D'^{1/2} P^T C_O^{-1/2}``; the stored row-vector matrix is
    its transpose.

    ``C_O`` receives a ridge of ``1e-6 * trace(C_O) / D`` only if its
    condition number exceeds 1e10.
    """
    _check_pair(ood, ind)
    stats_o = estimate_covariance(ood)
    stats_i = estimate_covariance(ind)
    eig_o = sym_eig(stats_o.cov)
    ridge = 0.0
    if condition_number(np.maximum(eig_o.values, 0.0)) > FDA_RIDGE_TRIGGER:
        ridge = FDA_RIDGE_REL * float(np.trace(stats_o.cov)) / ood.dim
        if condition_number(np.maximum(eig_o.values, 0.0) + ridge) > FDA_MAX_CONDITION:
            raise SingularMatrixError("out-of-domain covariance is too ill-conditioned for fDA")
    whiten = sym_power(eig_o, -0.5, ridge)
    color = sym_power(eig_o, 0.5, ridge)
    relative = sym_eig(whiten @ stats_i.cov @ whiten)
    floored = np.maximum(1.0, relative.values)
    middle = relative.reconstruct(np.sqrt(floored))
    column_map = color @ middle @ whiten
    return AdaptationTransform(
        matrix=column_map.T,
        pre_shift=stats_o.mean,
        post_shift=stats_i.mean,
        method="fda",
    )


def zscore_spectrum(s):
    """Standardize eigenvalues to zero mean and unit population std."""
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.size < 2:
        raise DegenerateSpectrumError("need at least two eigenvalues to standardize")
    mu = s.mean()
    sigma = s.std()
    if not sigma > SPECTRUM_SPREAD_RTOL * np.max(np.abs(s)):
        raise DegenerateSpectrumError("eigenvalues are all equal; z-score is undefined")
    return (s - mu) / sigma


def floor_spectrum(normalized, alpha):
    """Elementwise ``max(alpha, normalized)``."""
    if not alpha >= 0:
        raise ValidationError(f"alpha must be non-negative, got {alpha}")
    return np.maximum(float(alpha), np.asarray(normalized, dtype=np.float64))


def coralpp_spectrum(c_i, alpha) -> EigSpectrum:
    """Eigendecompose an in-domain covariance and apply z-scoring and flooring."""
    eig = sym_eig(c_i)
    s = eig.values
    z = zscore_spectrum(s)
    return EigSpectrum(
        raw=s,
        normalized=z,
        floored=floor_spectrum(z, alpha),
        alpha=float(alpha),
        mean=float(s.mean()),
        std=float(s.std()),
        vectors=eig.vectors,
    )


def coralpp_fit(ood: EmbeddingSet, ind: EmbeddingSet, cfg: CoralPPConfig = CoralPPConfig()) -> AdaptationTransform:
    """CORAL++: whiten with ``C_O + lambda I``, re-color with the rebuilt
    in-domain covariance ``P diag(v) P^T + lambda I`` where ``v`` is the
    floored z-score of the in-domain eigenvalues.
    """
    _check_pair(ood, ind)
    c_o = estimate_covariance(ood).cov
    c_i = estimate_covariance(ind).cov
    spec = coralpp_spectrum(c_i, cfg.alpha)
    # the rebuilt covariance shares P, so its square root needs no new EVD
    recolor = EigenDecomposition(vectors=spec.vectors, values=spec.floored).reconstruct(
        np.sqrt(spec.floored + cfg.lambda_)
    )
    whiten = sym_power(c_o, -0.5, cfg.lambda_)
    zeros = np.zeros(ood.dim)
    return AdaptationTransform(
        matrix=whiten @ recolor,
        pre_shift=zeros,
        post_shift=zeros,
        method="coralpp",
        lambda_=cfg.lambda_,
        alpha=cfg.alpha,
        spectrum=spec,
    )


def fit_transform(method, ood, ind, cfg: CoralPPConfig = CoralPPConfig()) -> AdaptationTransform:
    """Dispatch on a method name; ``raw``/``identity`` give the identity map."""
    if method in ("raw", "identity"):
        _check_pair(ood, ind)
        return identity_transform(ood.dim)
    if method == "coral":
        return coral_fit(ood, ind)
    if method == "fda":
        return fda_fit(ood, ind)
    if method == "coralpp":
        return coralpp_fit(ood, ind, cfg)
    raise ValidationError(f"unknown adaptation method {method!r}")


def apply_transform(t: AdaptationTransform, emb: EmbeddingSet) -> EmbeddingSet:
    if t.dim != emb.dim:
        raise ValidationError(f"transform has D={t.dim} but embeddings have D={emb.dim}")
    if t.method == "identity":
        return emb.replace_vectors(emb.vectors)
    return emb.replace_vectors((emb.vectors - t.pre_shift) @ t.matrix + t.post_shift)


def save_transform(t: AdaptationTransform, path):
    parts = [
        TRANSFORM_MAGIC,
        struct.pack("<BIdd", _METHOD_TAGS[t.method], t.dim, t.lambda_, t.alpha),
        t.pre_shift.astype("<f8").tobytes(),
        t.post_shift.astype("<f8").tobytes(),
        np.ascontiguousarray(t.matrix).astype("<f8").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_transform(path) -> AdaptationTransform:
    data = Path(path).read_bytes()
    if data[:4] != TRANSFORM_MAGIC:
        raise ParseError("bad magic, expected ADT1", offset=0)
    head = struct.calcsize("<BIdd")
    if len(data) < 4 + head:
        raise ParseError("truncated header", offset=len(data))
    tag, dim, lam, alpha = struct.unpack("<BIdd", data[4:4 + head])
    if tag >= len(METHODS):
        raise ParseError(f"unknown method tag {tag}", offset=4)
    expected = 4 + head + 8 * (2 * dim + dim * dim)
    if len(data) != expected:
        raise ParseError(f"expected {expected} bytes for dim {dim}, got {len(data)}", offset=min(len(data), expected))
    body = np.frombuffer(data, dtype="<f8", offset=4 + head).astype(np.float64)
    return AdaptationTransform(
        pre_shift=body[:dim],
        post_shift=body[dim:2 * dim],
        matrix=body[2 * dim:].reshape(dim, dim),
        method=METHODS[tag],
        lambda_=lam,
        alpha=alpha,
    )
