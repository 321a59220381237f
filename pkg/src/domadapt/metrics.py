"""Detection metrics: DET curve, equal error rate and minimum detection cost.

Conventions
-----------
* A trial is accepted when its score is ``>=`` the threshold.
* The DET curve has one operating point per distinct score plus a final
  reject-all point at ``+inf``.
* The EER is read off the piecewise-linear interpolation of the operating
  points where it crosses ``p_miss == p_fa``. Taking the midpoint of the
  bracketing step instead would differ by O(1/N).
* min-Cost is the normalized detection cost minimized over thresholds and
  averaged over target priors. The default priors 0.01 and 0.005 with unit
  costs are those of the NIST SRE19 CTS evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedio import ScoreSet, TrialList
from .errors import DegenerateKeysError, ValidationError


@dataclass(frozen=True)
class DetCurve:
    thresholds: np.ndarray
    p_miss: np.ndarray
    p_fa: np.ndarray
    n_target: int
    n_nontarget: int


@dataclass(frozen=True)
class CostParams:
    p_target: tuple = (0.01, 0.005)
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        priors = tuple(float(p) for p in np.atleast_1d(self.p_target))
        if not priors:
            raise ValidationError("need at least one target prior")
        if any(not 0.0 < p < 1.0 for p in priors):
            raise ValidationError(f"target priors must lie in (0, 1), got {priors}")
        if not (self.c_miss > 0 and self.c_fa > 0):
            raise ValidationError("detection costs must be positive")
        object.__setattr__(self, "p_target", priors)


def split_scores(scores: ScoreSet, trials: TrialList):
    """Return (target_scores, nontarget_scores) by matching pairs to keys."""
    if trials.keys is None:
        raise ValidationError("trial list carries no keys")
    key_of = {}
    for pair, key in zip(trials.pairs, trials.keys):
        if key_of.setdefault(pair, key) != key:
            raise ValidationError(f"conflicting keys for trial {pair}")
    keys = np.empty(len(scores), dtype=bool)
    for i, pair in enumerate(scores.pairs):
        try:
            keys[i] = key_of[pair]
        except KeyError:
            raise ValidationError(f"no key for scored trial {pair}") from None
    return scores.scores[keys], scores.scores[~keys]


def det_curve_from_scores(target_scores, nontarget_scores) -> DetCurve:
    tar = np.sort(np.asarray(target_scores, dtype=np.float64).reshape(-1))
    non = np.sort(np.asarray(nontarget_scores, dtype=np.float64).reshape(-1))
    if tar.size == 0 or non.size == 0:
        raise DegenerateKeysError(
            f"need at least one target and one non-target trial (got {tar.size} and {non.size})"
        )
    if not (np.all(np.isfinite(tar)) and np.all(np.isfinite(non))):
        raise ValidationError("non-finite score")
    thresholds = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    # targets strictly below the threshold are missed; non-targets at or
    # above it are false alarms
    n_miss = np.searchsorted(tar, thresholds, side="left")
    n_fa = non.size - np.searchsorted(non, thresholds, side="left")
    return DetCurve(
        thresholds=thresholds,
        p_miss=n_miss / tar.size,
        p_fa=n_fa / non.size,
        n_target=int(tar.size),
        n_nontarget=int(non.size),
    )


def det_curve(scores: ScoreSet, trials: TrialList) -> DetCurve:
    return det_curve_from_scores(*split_scores(scores, trials))


def eer(curve: DetCurve) -> float:
    diff = curve.p_miss - curve.p_fa
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(curve.p_miss[k])
    # interpolate between operating points k-1 and k
    t = -diff[k - 1] / (diff[k] - diff[k - 1])
    return float(curve.p_miss[k - 1] + t * (curve.p_miss[k] - curve.p_miss[k - 1]))


def min_cost(curve: DetCurve, params: CostParams = CostParams()) -> float:
    costs = []
    for p in params.p_target:
        dcf = params.c_miss * p * curve.p_miss + params.c_fa * (1 - p) * curve.p_fa
        costs.append(np.min(dcf) / min(params.c_miss * p, params.c_fa * (1 - p)))
    return float(np.mean(costs))


def evaluate(scores: ScoreSet, trials: TrialList, params: CostParams = CostParams()):
    """Return ``(eer, min_cost)`` for a scored, keyed trial list."""
    curve = det_curve(scores, trials)
    return eer(curve), min_cost(curve, params)
