"""Speaker-verification back-end: centering, PCA, length normalization, LDA,
two-covariance Gaussian PLDA, and cosine scoring.

Stages are fitted in that order on (already adapted) training embeddings.
The PLDA is estimated by moments rather than EM:

* within = pooled within-speaker covariance,
* between = covariance of speaker means minus ``within / n_h`` where
  ``n_h`` is the harmonic mean of utterances per speaker, clamped to PSD.

No score normalization is applied.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .embedio import EmbeddingSet, ScoreSet, TrialList
from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    ModelStateError,
    ParseError,
    TrialLookupError,
    ValidationError,
)
from .linalg import estimate_covariance, sym_eig, sym_power

DEPTHS = ("centered", "pca", "lnorm", "lda")
LDA_RIDGE_REL = 1e-8
MODEL_MAGIC = b"BKD1"
MODEL_VERSION = 1

_STAGE_BITS = {"pca": 1, "lda": 2, "plda": 4}


@dataclass(frozen=True)
class PldaParams:
    """Two-covariance model: speaker ``y ~ N(mu, between)``, utterance
    ``x ~ N(y, within)``."""

    mu: np.ndarray
    between: np.ndarray
    within: np.ndarray

    @property
    def dim(self):
        return self.mu.shape[0]

    def scoring_matrices(self):
        """Return (Q, P, const) so that
        ``llr(e, t) = 0.5 e'Qe + 0.5 t'Qt + e'Pt + const`` on centered inputs.
        """
        total = self.between + self.within
        total_inv = np.linalg.inv(total)
        # inverse of [[T, B], [B, T]] via the Schur complement T - B T^-1 B
        schur = total - self.between @ total_inv @ self.between
        a11 = np.linalg.inv(0.5 * (schur + schur.T))
        a12 = -total_inv @ self.between @ a11
        _, logdet_t = np.linalg.slogdet(total)
        _, logdet_s = np.linalg.slogdet(schur)
        q = total_inv - a11
        p = -a12
        const = 0.5 * (logdet_t - logdet_s)
        return 0.5 * (q + q.T), 0.5 * (p + p.T), const


@dataclass(frozen=True)
class BackendModel:
    center_mean: np.ndarray
    pca: Optional[np.ndarray] = None
    lda: Optional[np.ndarray] = None
    plda: Optional[PldaParams] = None

    @property
    def dims(self):
        d = self.center_mean.shape[0]
        d1 = self.pca.shape[1] if self.pca is not None else d
        d2 = self.lda.shape[1] if self.lda is not None else d1
        return d, d1, d2

    @property
    def is_partial(self):
        return self.plda is None


def _speaker_groups(labels):
    uniq, inverse, counts = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True, return_counts=True)
    return uniq, inverse, counts


def _class_means(x, inverse, n_classes, counts):
    sums = np.zeros((n_classes, x.shape[1]))
    np.add.at(sums, inverse, x)
    return sums / counts[:, None]


def _scatter(x, inverse, counts):
    """Within- and between-class scatter, both normalized by N."""
    n = x.shape[0]
    means = _class_means(x, inverse, counts.size, counts)
    resid = x - means[inverse]
    s_w = resid.T @ resid / n
    dev = means - x.mean(axis=0)
    s_b = (dev * counts[:, None]).T @ dev / n
    return 0.5 * (s_w + s_w.T), 0.5 * (s_b + s_b.T)


def length_normalize(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot length-normalize a zero vector")
    return x / norms


def fit_lda(x, labels, d2):
    """Fisher LDA: top ``d2`` generalized eigenvectors of ``(S_b, S_w)``.

    Solved by whitening with ``(S_w + r I)^{-1/2}``, ``r = 1e-8 tr(S_w)/d``,
    so the projected within-class scatter is (close to) the identity.
    """
    _, inverse, counts = _speaker_groups(labels)
    s_w, s_b = _scatter(x, inverse, counts)
    ridge = LDA_RIDGE_REL * float(np.trace(s_w)) / x.shape[1]
    whiten = sym_power(s_w, -0.5, ridge)
    eig = sym_eig(whiten @ s_b @ whiten)
    return whiten @ eig.vectors[:, :d2]


def fit_plda(x, labels) -> PldaParams:
    _, inverse, counts = _speaker_groups(labels)
    k = counts.size
    n = x.shape[0]
    if k < 2:
        raise InsufficientDataError(f"PLDA needs at least 2 speakers, got {k}")
    if np.any(counts < 2):
        raise InsufficientDataError("PLDA needs at least 2 utterances per speaker")
    means = _class_means(x, inverse, k, counts)
    resid = x - means[inverse]
    within = resid.T @ resid / (n - k)
    within = 0.5 * (within + within.T)
    n_h = k / np.sum(1.0 / counts)
    between = estimate_covariance(means).cov - within / n_h
    eig = sym_eig(between)
    between = eig.reconstruct(np.maximum(eig.values, 0.0))
    return PldaParams(mu=x.mean(axis=0), between=between, within=within)


def fit_backend(
    train: EmbeddingSet,
    centering_set: Optional[EmbeddingSet] = None,
    d1: int = 200,
    d2: int = 100,
    *,
    cosine_only: bool = False,
) -> BackendModel:
    """Fit centering, PCA, LN, LDA and PLDA on labeled training embeddings.

    Parameters
    ----------
    train : EmbeddingSet
        Labeled (adapted) training embeddings.
    centering_set : EmbeddingSet, optional
        Data whose mean is subtracted first, typically in-domain
        development data. Defaults to ``train``.
    d1, d2 : int
        PCA and LDA output dimensions, ``d2 <= d1 <= D``.
    cosine_only : bool
        Stop after PCA; the model then supports cosine scoring only.
    """
    if centering_set is None:
        centering_set = train
    if centering_set.dim != train.dim:
        raise ValidationError("centering set and training set differ in dimension")
    dim = train.dim
    if not 1 <= d1 <= dim:
        raise ValidationError(f"need 1 <= d1 <= D={dim}, got d1={d1}")
    center = centering_set.vectors.mean(axis=0)
    # stages are fitted on train centered by its own mean; center_mean is
    # what gets subtracted from vectors at scoring time
    x = train.vectors - train.vectors.mean(axis=0)
    pca = sym_eig(estimate_covariance(x).cov).vectors[:, :d1]
    if cosine_only:
        return BackendModel(center_mean=center, pca=pca)

    if train.labels is None:
        raise InsufficientDataError("back-end training needs speaker labels")
    _, inverse, counts = _speaker_groups(train.labels)
    if counts.size < 2:
        raise InsufficientDataError(f"need at least 2 speakers, got {counts.size}")
    if np.any(counts < 2):
        raise InsufficientDataError("every speaker needs at least 2 utterances")
    if not 1 <= d2 <= min(d1, counts.size - 1):
        raise ValidationError(f"need 1 <= d2 <= min(d1, speakers - 1) = {min(d1, counts.size - 1)}, got d2={d2}")

    z = length_normalize(x @ pca)
    lda = fit_lda(z, train.labels, d2)
    plda = fit_plda(z @ lda, train.labels)
    return BackendModel(center_mean=center, pca=pca, lda=lda, plda=plda)


def transform_embedding(model: BackendModel, x, depth="lda"):
    """Run vectors (one per row, or a single vector) through the stages up to ``depth``."""
    if depth not in DEPTHS:
        raise ValidationError(f"unknown depth {depth!r}, expected one of {DEPTHS}")
    x = np.asarray(x, dtype=np.float64) - model.center_mean
    if depth == "centered":
        return x
    if model.pca is None:
        raise ModelStateError("model has no PCA stage")
    x = x @ model.pca
    if depth == "pca":
        return x
    x = length_normalize(x)
    if depth == "lnorm":
        return x
    if model.lda is None:
        raise ModelStateError("model has no LDA stage")
    return x @ model.lda


def plda_score(model: BackendModel, enroll, test):
    """Log-likelihood ratio of same- vs different-speaker hypotheses.

    Inputs are LDA-depth vectors (single vectors or row-aligned batches).
    """
    if model.plda is None:
        raise ModelStateError("model has no fitted PLDA")
    q, p, const = model.plda.scoring_matrices()
    e = np.asarray(enroll, dtype=np.float64) - model.plda.mu
    t = np.asarray(test, dtype=np.float64) - model.plda.mu
    llr = 0.5 * np.sum((e @ q) * e, axis=-1) + 0.5 * np.sum((t @ q) * t, axis=-1) + np.sum((e @ p) * t, axis=-1) + const
    return llr if np.ndim(llr) else float(llr)


def cosine_score(enroll, test):
    e = length_normalize(enroll)
    t = length_normalize(test)
    s = np.clip(np.sum(e * t, axis=-1), -1.0, 1.0)
    return s if np.ndim(s) else float(s)


def _lookup(emb: EmbeddingSet, ids, role):
    index = emb.index()
    rows = np.empty(len(ids), dtype=np.intp)
    for i, u in enumerate(ids):
        try:
            rows[i] = index[u]
        except KeyError:
            raise TrialLookupError(f"{role} id {u!r} not found") from None
    return rows


def score_trials(
    model: BackendModel,
    enroll: EmbeddingSet,
    test: EmbeddingSet,
    trials: TrialList,
    scoring="plda",
    *,
    cosine_depth="lnorm",
) -> ScoreSet:
    """Score every trial; output order follows ``trials``."""
    e_rows = _lookup(enroll, [e for e, _ in trials.pairs], "enroll")
    t_rows = _lookup(test, [t for _, t in trials.pairs], "test")
    if scoring == "plda":
        e = transform_embedding(model, enroll.vectors, "lda")
        t = transform_embedding(model, test.vectors, "lda")
        q, p, const = model.plda.scoring_matrices() if model.plda is not None else (None, None, None)
        if q is None:
            raise ModelStateError("model has no fitted PLDA")
        e = e - model.plda.mu
        t = t - model.plda.mu
        e_self = 0.5 * np.sum((e @ q) * e, axis=1)
        t_self = 0.5 * np.sum((t @ q) * t, axis=1)
        cross = np.sum((e @ p)[e_rows] * t[t_rows], axis=1)
        scores = e_self[e_rows] + t_self[t_rows] + cross + const
    elif scoring == "cosine":
        e = length_normalize(transform_embedding(model, enroll.vectors, cosine_depth))
        t = length_normalize(transform_embedding(model, test.vectors, cosine_depth))
        scores = np.clip(np.sum(e[e_rows] * t[t_rows], axis=1), -1.0, 1.0)
    else:
        raise ValidationError(f"unknown scoring {scoring!r}, expected 'plda' or 'cosine'")
    return ScoreSet(pairs=trials.pairs, scores=scores)


# ---------------------------------------------------------------------------
# serialization


def _block(arr):
    arr = np.atleast_2d(np.asarray(arr, dtype="<f8"))
    return struct.pack("<II", *arr.shape) + np.ascontiguousarray(arr).tobytes()


def save_model(model: BackendModel, path):
    mask = 0
    for name, bit in _STAGE_BITS.items():
        if getattr(model, name) is not None:
            mask |= bit
    d, d1, d2 = model.dims
    parts = [MODEL_MAGIC, struct.pack("<HBIII", MODEL_VERSION, mask, d, d1, d2), _block(model.center_mean)]
    if model.pca is not None:
        parts.append(_block(model.pca))
    if model.lda is not None:
        parts.append(_block(model.lda))
    if model.plda is not None:
        parts += [_block(model.plda.mu), _block(model.plda.between), _block(model.plda.within)]
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> BackendModel:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ParseError("bad magic, expected BKD1", offset=0)
    pos = 4
    head = struct.calcsize("<HBIII")
    if len(data) < pos + head:
        raise ParseError("truncated header", offset=len(data))
    version, mask, d, d1, d2 = struct.unpack("<HBIII", data[pos:pos + head])
    pos += head
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version {version}", offset=4)

    def block(shape):
        nonlocal pos
        if len(data) < pos + 8:
            raise ParseError("truncated block header", offset=pos)
        rows, cols = struct.unpack("<II", data[pos:pos + 8])
        if (rows, cols) != shape:
            raise ParseError(f"block shape {(rows, cols)} != expected {shape}", offset=pos)
        pos += 8
        nbytes = 8 * rows * cols
        if len(data) < pos + nbytes:
            raise ParseError("truncated block", offset=pos)
        arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
        return arr

    center = block((1, d))[0]
    pca = block((d, d1)) if mask & _STAGE_BITS["pca"] else None
    lda = block((d1, d2)) if mask & _STAGE_BITS["lda"] else None
    plda = None
    if mask & _STAGE_BITS["plda"]:
        plda = PldaParams(mu=block((1, d2))[0], between=block((d2, d2)), within=block((d2, d2)))
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes", offset=pos)
    return BackendModel(center_mean=center, pca=pca, lda=lda, plda=plda)
