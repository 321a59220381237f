"""Feature-based domain adaptation for speaker embeddings with a PLDA /
cosine scoring back-end and detection metrics."""

from .adapt import (
    AdaptationTransform,
    CoralPPConfig,
    apply_transform,
    coral_fit,
    coralpp_fit,
    fda_fit,
    fit_transform,
)
from .backend import BackendModel, fit_backend, score_trials
from .embedio import EmbeddingSet, ScoreSet, TrialList, read_embeddings, write_embeddings
from .metrics import CostParams, det_curve, eer, evaluate, min_cost

__version__ = "0.1.0"
