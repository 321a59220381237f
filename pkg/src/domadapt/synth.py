"""Synthetic cross-domain speaker embeddings and the experiment driver.

Speakers are latent ``y ~ N(0, between_scale^2 I)`` and utterances
``x = y + e`` with ``e ~ N(0, within_scale^2 I)``, so the Gaussian PLDA
assumptions hold exactly in the source domain. Target-domain utterances go
through a fixed affine distortion ``x -> R S x + m``:

* ``R`` is a random rotation moved towards the identity: ``R = expm(r L)``
  where ``L = logm(Q)`` for a Haar-random rotation ``Q`` and ``r`` is
  ``rotation_strength``,
* ``S`` is diagonal with log-spaced entries whose max/min ratio is
  ``anisotropy`` (geometric mean 1),
* ``m`` is a random direction scaled to ``mean_shift_norm``.

Optionally, utterances also carry a low-rank channel nuisance
``e += nuisance_scale * V h`` with ``V`` a random orthonormal
``dim x nuisance_rank`` basis and ``h ~ N(0, I)``, shared by both domains.
This gives the within-speaker covariance the structured directions that
PLDA exploits and cosine scoring cannot.

Source and target use disjoint speakers. The target domain yields an
unlabeled adaptation set plus enrollment/test sets scored on every
enroll x test pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import expm, logm
from scipy.stats import special_ortho_group

from .adapt import CoralPPConfig, apply_transform, fit_transform
from .backend import fit_backend, score_trials
from .embedio import EmbeddingSet, TrialList
from .errors import ValidationError
from .metrics import CostParams, det_curve, eer, min_cost

ADAPT_METHODS = ("raw", "coral", "fda", "coralpp")


@dataclass(frozen=True)
class DomainShiftSpec:
    dim: int = 32
    n_speakers: int = 200
    utts_per_speaker: int = 10
    between_scale: float = 1.0
    within_scale: float = 0.5
    rotation_strength: float = 0.5
    anisotropy: float = 4.0
    mean_shift_norm: float = 2.0
    seed: int = 0
    n_adapt_speakers: int = 200
    adapt_utts_per_speaker: int = 5
    n_eval_speakers: int = 100
    test_utts_per_speaker: int = 3
    nuisance_rank: int = 0
    nuisance_scale: float = 0.0

    def __post_init__(self):
        for name in ("dim", "n_speakers", "utts_per_speaker", "n_adapt_speakers",
                     "adapt_utts_per_speaker", "n_eval_speakers", "test_utts_per_speaker"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if not (self.between_scale > 0 and self.within_scale > 0):
            raise ValidationError("between_scale and within_scale must be positive")
        if not 0.0 <= self.rotation_strength <= 1.0:
            raise ValidationError("rotation_strength must lie in [0, 1]")
        if not self.anisotropy > 0:
            raise ValidationError("anisotropy must be positive")
        if not 0 <= int(self.nuisance_rank) <= self.dim:
            raise ValidationError("nuisance_rank must lie in [0, dim]")
        if not self.nuisance_scale >= 0:
            raise ValidationError("nuisance_scale must be non-negative")
        if not self.mean_shift_norm >= 0:
            raise ValidationError("mean_shift_norm must be non-negative")
        if self.n_eval_speakers < 2:
            raise ValidationError("need at least 2 evaluation speakers for non-target trials")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Distortion:
    rotation: np.ndarray
    scales: np.ndarray
    shift: np.ndarray

    def apply(self, x):
        return (x * self.scales) @ self.rotation.T + self.shift

    def invert(self, x):
        return ((x - self.shift) @ self.rotation) / self.scales


@dataclass(frozen=True)
class SyntheticData:
    source: EmbeddingSet
    target_adapt: EmbeddingSet
    target_enroll: EmbeddingSet
    target_test: EmbeddingSet
    trials: TrialList
    distortion: Distortion = field(repr=False)


# shifted benchmark behind the experiment command and the directional checks
BENCHMARK_SPEC = DomainShiftSpec(
    within_scale=0.4,
    n_eval_speakers=200,
    test_utts_per_speaker=5,
    nuisance_rank=4,
    nuisance_scale=1.0,
)
BENCHMARK_DIMS = (12, 12)


def _rotation(rng, dim, strength):
    if dim == 1 or strength == 0:
        return np.eye(dim)
    q = special_ortho_group.rvs(dim, random_state=rng)
    gen = np.real(logm(q))
    gen = 0.5 * (gen - gen.T)
    r = expm(strength * gen)
    # re-orthonormalize away the expm round-off
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def make_distortion(spec: DomainShiftSpec, rng) -> Distortion:
    d = spec.dim
    scales = spec.anisotropy ** (np.linspace(0.5, -0.5, d) if d > 1 else np.zeros(1))
    direction = rng.standard_normal(d)
    shift = spec.mean_shift_norm * direction / np.linalg.norm(direction)
    return Distortion(rotation=_rotation(rng, d, spec.rotation_strength), scales=scales, shift=shift)


def _speakers(rng, spec, n_spk, n_utt, nuisance):
    y = spec.between_scale * rng.standard_normal((n_spk, spec.dim))
    eps = spec.within_scale * rng.standard_normal((n_spk, n_utt, spec.dim))
    if nuisance.shape[1]:
        h = rng.standard_normal((n_spk, n_utt, nuisance.shape[1]))
        eps += spec.nuisance_scale * h @ nuisance.T
    return (y[:, None, :] + eps).reshape(n_spk * n_utt, spec.dim)


def generate(spec: DomainShiftSpec) -> SyntheticData:
    """Draw one synthetic source/target data set; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(int(spec.seed))
    dist = make_distortion(spec, rng)
    nuisance = np.linalg.qr(rng.standard_normal((spec.dim, spec.dim)))[0][:, :spec.nuisance_rank]

    u = spec.utts_per_speaker
    src = _speakers(rng, spec, spec.n_speakers, u, nuisance)
    source = EmbeddingSet(
        ids=[f"src{s:05d}-{k:03d}" for s in range(spec.n_speakers) for k in range(u)],
        labels=[f"src{s:05d}" for s in range(spec.n_speakers) for _ in range(u)],
        vectors=src,
        domain="source",
    )

    ua = spec.adapt_utts_per_speaker
    adapt = dist.apply(_speakers(rng, spec, spec.n_adapt_speakers, ua, nuisance))
    target_adapt = EmbeddingSet(
        ids=[f"adp{s:05d}-{k:03d}" for s in range(spec.n_adapt_speakers) for k in range(ua)],
        vectors=adapt,
        domain="target",
    )

    ne, ut = spec.n_eval_speakers, spec.test_utts_per_speaker
    evals = dist.apply(_speakers(rng, spec, ne, 1 + ut, nuisance)).reshape(ne, 1 + ut, spec.dim)
    enroll_ids = [f"enr{s:05d}" for s in range(ne)]
    test_ids = [f"tst{s:05d}-{k:03d}" for s in range(ne) for k in range(ut)]
    target_enroll = EmbeddingSet(ids=enroll_ids, labels=[f"eval{s:05d}" for s in range(ne)],
                                 vectors=evals[:, 0], domain="target")
    target_test = EmbeddingSet(ids=test_ids, labels=[f"eval{s:05d}" for s in range(ne) for _ in range(ut)],
                               vectors=evals[:, 1:].reshape(ne * ut, spec.dim), domain="target")
    pairs, keys = [], []
    for s in range(ne):
        for s2 in range(ne):
            for k in range(ut):
                pairs.append((enroll_ids[s], test_ids[s2 * ut + k]))
                keys.append(s == s2)
    return SyntheticData(
        source=source,
        target_adapt=target_adapt,
        target_enroll=target_enroll,
        target_test=target_test,
        trials=TrialList(pairs=pairs, keys=keys),
        distortion=dist,
    )


def subsample(emb: EmbeddingSet, ratio, seed) -> EmbeddingSet:
    """Deterministic random subset holding ``round(ratio * N)`` rows (at least 2)."""
    if not 0 < ratio <= 1:
        raise ValidationError(f"ratio must lie in (0, 1], got {ratio}")
    if ratio == 1:
        return emb
    k = max(2, int(round(ratio * emb.n)))
    rng = np.random.default_rng([int(seed), 0x5AB5])
    return emb.subset(np.sort(rng.permutation(emb.n)[:k]))


@dataclass(frozen=True)
class ExperimentResult:
    eer: float
    min_cost: float


def default_dims(dim, n_speakers):
    """Back-end dimensions (200, 100) capped by the data dimension and by
    the number of speakers."""
    d1 = min(200, dim)
    d2 = min(100, d1, n_speakers - 1)
    return d1, d2


def run_on_data(
    data: SyntheticData,
    method="coralpp",
    cfg: CoralPPConfig = CoralPPConfig(),
    scoring="plda",
    *,
    ratio=1.0,
    subset_seed=0,
    d1: Optional[int] = None,
    d2: Optional[int] = None,
    cost: CostParams = CostParams(),
) -> ExperimentResult:
    """Adapt, train the back-end, score target trials and measure.

    ``method="oracle"`` skips adaptation and instead maps all target data
    back through the known inverse distortion.
    """
    adapt_set = subsample(data.target_adapt, ratio, subset_seed)
    enroll, test, source = data.target_enroll, data.target_test, data.source
    if method == "oracle":
        inv = data.distortion.invert
        adapt_set = adapt_set.replace_vectors(inv(adapt_set.vectors))
        enroll = enroll.replace_vectors(inv(enroll.vectors))
        test = test.replace_vectors(inv(test.vectors))
    else:
        source = apply_transform(fit_transform(method, source, adapt_set, cfg), source)
    n_spk = len(set(source.labels))
    dd1, dd2 = default_dims(source.dim, n_spk)
    model = fit_backend(source, adapt_set, d1 or dd1, d2 or dd2, cosine_only=(scoring == "cosine"))
    scores = score_trials(model, enroll, test, data.trials, scoring)
    curve = det_curve(scores, data.trials)
    return ExperimentResult(eer=eer(curve), min_cost=min_cost(curve, cost))


def run_experiment(spec: DomainShiftSpec, method="coralpp", cfg: CoralPPConfig = CoralPPConfig(),
                   scoring="plda", **kwargs) -> ExperimentResult:
    """Generate data from ``spec`` and run one (method, scoring) arm on it."""
    return run_on_data(generate(spec), method, cfg, scoring, subset_seed=spec.seed, **kwargs)


def median_over_seeds(spec: DomainShiftSpec, seeds, method, cfg=CoralPPConfig(), scoring="plda", **kwargs):
    """Median EER and median min-Cost over independent seeds."""
    results = [run_experiment(replace(spec, seed=s), method, cfg, scoring, **kwargs) for s in seeds]
    return ExperimentResult(
        eer=float(np.median([r.eer for r in results])),
        min_cost=float(np.median([r.min_cost for r in results])),
    )
