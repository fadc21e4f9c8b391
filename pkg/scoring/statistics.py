"""
Per-machine normal statistics and the Mahalanobis score.

For every (machine_type, machine_id) group of training-normal embeddings:

    mu     sample mean
    Sigma  sample covariance (n - 1 denominator)
    eps    eps_scale * trace(Sigma) / d, floored at eps_floor
    L      lower Cholesky factor of Sigma + eps * I

a_maha(x) = || L^-1 (x - mu) ||, the norm of the whitened residual.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg

from utils.errors import InsufficientDataError, MissingStatisticsError, ShapeMismatchError

logger = logging.getLogger(__name__)

GroupKey = Tuple[str, int]


class ScorerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    eps_scale: float = Field(default=1e-3, ge=0.0)
    eps_floor: float = Field(default=1e-6, ge=0.0)
    std_floor: float = Field(default=1e-12, gt=0.0)


@dataclass(frozen=True)
class GroupStatistics:
    mean: np.ndarray
    covariance: np.ndarray
    epsilon: float
    count: int
    cholesky: np.ndarray = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def regularized_covariance(self) -> np.ndarray:
        return self.covariance + self.epsilon * np.eye(self.dim)

    @classmethod
    def from_moments(cls, mean: np.ndarray, covariance: np.ndarray, epsilon: float, count: int) -> "GroupStatistics":
        """
        Raises:
            ValueError: Sigma + eps*I is not positive definite
        """
        mean = np.asarray(mean, dtype=np.float64)
        covariance = np.asarray(covariance, dtype=np.float64)
        covariance = 0.5 * (covariance + covariance.T)
        try:
            chol = linalg.cholesky(covariance + epsilon * np.eye(mean.shape[0]), lower=True)
        except linalg.LinAlgError as e:
            raise ValueError(f"Regularized covariance is not positive definite: {e}") from e
        return cls(mean=mean, covariance=covariance, epsilon=float(epsilon), count=int(count), cholesky=chol)

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Whitened residuals for one vector (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ShapeMismatchError(f"Embedding dimension {x.shape[-1]} != statistics dimension {self.dim}")
        residual = np.atleast_2d(x - self.mean).T
        whitened = linalg.solve_triangular(self.cholesky, residual, lower=True).T
        return whitened[0] if x.ndim == 1 else whitened

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "covariance": self.covariance,
            "epsilon": self.epsilon,
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GroupStatistics":
        return cls.from_moments(data["mean"], data["covariance"], data["epsilon"], data["count"])


@dataclass
class NormalStatistics:
    groups: Dict[GroupKey, GroupStatistics] = field(default_factory=dict)

    def get(self, machine_type: str, machine_id: int) -> GroupStatistics:
        try:
            return self.groups[(machine_type, int(machine_id))]
        except KeyError:
            raise MissingStatisticsError(
                f"No normal statistics for machine {machine_type}/id_{int(machine_id):02d}"
            ) from None

    def score(self, machine_type: str, machine_id: int, x: np.ndarray) -> np.ndarray:
        return mahalanobis_score(x, self.get(machine_type, machine_id))

    def to_dict(self) -> Dict[str, Any]:
        return {f"{t}/{i}": stats.to_dict() for (t, i), stats in sorted(self.groups.items())}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NormalStatistics":
        groups = {}
        for key, value in data.items():
            machine_type, _, machine_id = key.rpartition("/")
            groups[(machine_type, int(machine_id))] = GroupStatistics.from_dict(value)
        return cls(groups)


def regularization_epsilon(covariance: np.ndarray, cfg: ScorerConfig = ScorerConfig()) -> float:
    d = covariance.shape[0]
    return max(cfg.eps_scale * float(np.trace(covariance)) / d, cfg.eps_floor)


def fit_normal_statistics(
    groups: Mapping[GroupKey, np.ndarray],
    cfg: ScorerConfig = ScorerConfig(),
) -> NormalStatistics:
    """
    Fit mean, regularized covariance and Cholesky factor per group.

    Raises:
        InsufficientDataError: a group with fewer than two embeddings (names the group)
    """
    fitted: Dict[GroupKey, GroupStatistics] = {}
    for (machine_type, machine_id), embeddings in sorted(groups.items()):
        x = np.asarray(embeddings, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise InsufficientDataError(
                f"Group {machine_type}/id_{int(machine_id):02d} needs at least 2 embeddings, "
                f"got {0 if x.ndim != 2 else x.shape[0]}"
            )
        mean = x.mean(axis=0)
        covariance = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
        epsilon = regularization_epsilon(covariance, cfg)
        fitted[(machine_type, int(machine_id))] = GroupStatistics.from_moments(mean, covariance, epsilon, x.shape[0])
        logger.debug(f"Statistics for {machine_type}/id_{int(machine_id):02d}: n={x.shape[0]}, eps={epsilon:.3g}")
    return NormalStatistics(fitted)


def mahalanobis_score(x: np.ndarray, stats: GroupStatistics) -> np.ndarray:
    """Mahalanobis distance of one embedding (scalar) or of each row of a batch."""
    return np.linalg.norm(stats.whiten(x), axis=-1)
