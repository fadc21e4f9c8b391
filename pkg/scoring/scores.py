"""
Raw anomaly scores and their per-ID standardization.

All scores are oriented so that higher means more anomalous:

    out   -log p, p = type-head probability of the target machine type
    arc   -log softmax(s*cos(theta))[claimed ID], margin-free logits
    maha  Mahalanobis distance to the claimed ID's normal statistics
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Mapping, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from utils.errors import MissingStatisticsError

logger = logging.getLogger(__name__)

SCORE_KINDS: Tuple[str, ...] = ("arc", "maha", "out")

ArrayLike = Union[float, np.ndarray]


def score_out(type_prob: ArrayLike) -> ArrayLike:
    """
    Raises:
        ValueError: probability outside (0, 1]
    """
    p = np.asarray(type_prob, dtype=np.float64)
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("Type probabilities must lie in (0, 1]")
    out = -np.log(p)
    return float(out) if out.ndim == 0 else out


def score_arc(id_logits: np.ndarray, claimed: Union[int, np.ndarray]) -> ArrayLike:
    """
    Negative log-probability of the claimed ID class under margin-free logits.

    id_logits is (K,) or (n, K); claimed is a class index or one per row.

    Raises:
        ValueError: a claimed class outside [0, K)
    """
    logits = np.atleast_2d(np.asarray(id_logits, dtype=np.float64))
    claimed_idx = np.atleast_1d(np.asarray(claimed, dtype=np.int64))
    k = logits.shape[1]
    if np.any(claimed_idx < 0) or np.any(claimed_idx >= k):
        raise ValueError(f"Claimed machine-ID class outside [0, {k})")
    scores = -log_softmax(logits, axis=1)[np.arange(len(logits)), claimed_idx]
    return float(scores[0]) if np.ndim(id_logits) == 1 else scores


@dataclass
class StandardizationParams:
    """(mean, std) per (machine_id, kind), fitted on training normals."""

    params: Dict[Tuple[int, str], Tuple[float, float]] = field(default_factory=dict)
    std_floor: float = 1e-12

    @classmethod
    def fit(
        cls,
        machine_ids: Iterable[int],
        scores: Mapping[str, np.ndarray],
        std_floor: float = 1e-12,
    ) -> "StandardizationParams":
        """Fit per-ID moments of each score kind (n - 1 denominator)."""
        ids = np.asarray(list(machine_ids), dtype=np.int64)
        params: Dict[Tuple[int, str], Tuple[float, float]] = {}
        for kind, values in scores.items():
            values = np.asarray(values, dtype=np.float64)
            for machine_id in np.unique(ids):
                group = values[ids == machine_id]
                std = float(np.std(group, ddof=1)) if group.size > 1 else 0.0
                if std < std_floor:
                    logger.warning(
                        f"Degenerate '{kind}' scores for id {machine_id}; std floored at {std_floor}"
                    )
                params[(int(machine_id), kind)] = (float(np.mean(group)), max(std, std_floor))
        return cls(params, std_floor)

    def get(self, machine_id: int, kind: str) -> Tuple[float, float]:
        try:
            return self.params[(int(machine_id), kind)]
        except KeyError:
            raise MissingStatisticsError(
                f"No standardization parameters for id {int(machine_id)}, score '{kind}'"
            ) from None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "std_floor": self.std_floor,
            "params": [[mid, kind, mean, std] for (mid, kind), (mean, std) in sorted(self.params.items())],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StandardizationParams":
        params = {(int(mid), str(kind)): (float(mean), float(std)) for mid, kind, mean, std in data["params"]}
        return cls(params, float(data.get("std_floor", 1e-12)))


def standardize(
    score: ArrayLike,
    params: StandardizationParams,
    machine_id: Union[int, np.ndarray],
    kind: str,
) -> ArrayLike:
    """z = (score - mean) / std for the given machine ID(s) and score kind."""
    if np.ndim(machine_id) == 0:
        mean, std = params.get(int(machine_id), kind)
        return (np.asarray(score, dtype=np.float64) - mean) / std if np.ndim(score) else (float(score) - mean) / std

    ids = np.asarray(machine_id, dtype=np.int64)
    values = np.asarray(score, dtype=np.float64)
    z = np.empty_like(values)
    for mid in np.unique(ids):
        mean, std = params.get(int(mid), kind)
        mask = ids == mid
        z[mask] = (values[mask] - mean) / std
    return z
