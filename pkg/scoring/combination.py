"""
Choice of which standardized scores are summed into the final score.

Without labeled validation data the full set {arc, maha, out} is used. With
validation data every nonempty subset is ranked by AUC; ties go to the larger
subset, then to the lexicographically smaller one (arc < maha < out).
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from evaluation.metrics import anomaly_labels, compute_auc
from scoring.scores import SCORE_KINDS
from utils.errors import EvaluationError

logger = logging.getLogger(__name__)

AUC_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CombinationSpec:
    kinds: Tuple[str, ...] = SCORE_KINDS
    validation_auc: Optional[float] = None

    def __post_init__(self):
        kinds = tuple(sorted(set(self.kinds)))
        if not kinds:
            raise ValueError("A score combination needs at least one kind")
        unknown = set(kinds) - set(SCORE_KINDS)
        if unknown:
            raise ValueError(f"Unknown score kinds: {sorted(unknown)}")
        object.__setattr__(self, "kinds", kinds)

    def to_dict(self) -> Dict[str, Any]:
        return {"kinds": list(self.kinds), "validation_auc": self.validation_auc}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CombinationSpec":
        return cls(tuple(data["kinds"]), data.get("validation_auc"))


def all_subsets() -> List[Tuple[str, ...]]:
    """The seven nonempty subsets of the score kinds, each sorted."""
    return [combo for size in range(1, len(SCORE_KINDS) + 1) for combo in combinations(SCORE_KINDS, size)]


def combined_score(standardized: Mapping[str, Any], spec: CombinationSpec) -> Any:
    """Sum of the standardized scores of the kinds in spec."""
    missing = [k for k in spec.kinds if k not in standardized]
    if missing:
        raise KeyError(f"Standardized scores missing for {missing}")
    total = 0.0
    for kind in spec.kinds:
        total = total + np.asarray(standardized[kind], dtype=np.float64)
    return float(total) if np.ndim(total) == 0 else total


def _subset_auc(
    scores: np.ndarray,
    anomalous: np.ndarray,
    groups: Optional[np.ndarray],
) -> float:
    if groups is None:
        return compute_auc(scores, anomalous)
    aucs = []
    for group in np.unique(groups):
        mask = groups == group
        if anomalous[mask].all() or not anomalous[mask].any():
            continue
        aucs.append(compute_auc(scores[mask], anomalous[mask]))
    if not aucs:
        raise EvaluationError("No validation group contains both normal and anomalous clips")
    return float(np.mean(aucs))


def select_combination(
    validation_scores: Optional[Mapping[str, np.ndarray]] = None,
    validation_labels: Optional[Sequence[Any]] = None,
    groups: Optional[Sequence[Any]] = None,
) -> CombinationSpec:
    """
    Pick the subset of standardized scores with the best validation AUC.

    When groups (e.g. machine IDs) are given, the criterion is the mean of
    per-group AUCs. Deterministic for identical inputs.
    """
    if validation_scores is None or validation_labels is None:
        logger.info("No labeled validation data; combining all scores")
        return CombinationSpec(SCORE_KINDS)

    anomalous = anomaly_labels(list(validation_labels))
    group_arr = None if groups is None else np.asarray(groups)
    best: Optional[Tuple[float, Tuple[str, ...]]] = None
    for subset in all_subsets():
        if any(kind not in validation_scores for kind in subset):
            continue
        summed = combined_score(validation_scores, CombinationSpec(subset))
        auc = _subset_auc(np.atleast_1d(summed), anomalous, group_arr)
        logger.debug(f"Validation AUC of {'+'.join(subset)}: {auc:.4f}")
        if best is None:
            best = (auc, subset)
            continue
        best_auc, best_subset = best
        if auc > best_auc + AUC_TIE_TOLERANCE:
            best = (auc, subset)
        elif abs(auc - best_auc) <= AUC_TIE_TOLERANCE:
            if len(subset) > len(best_subset) or (len(subset) == len(best_subset) and subset < best_subset):
                best = (auc, subset)

    if best is None:
        raise EvaluationError("Validation data carries none of the score kinds")
    logger.info(f"Selected score combination {'+'.join(best[1])} (validation AUC {best[0]:.4f})")
    return CombinationSpec(best[1], validation_auc=best[0])
