import logging
from typing import Sequence, Union

import numpy as np
from scipy.stats import rankdata

from signal_frontend.audio import MachineCondition
from utils.errors import EvaluationError

logger = logging.getLogger(__name__)

LabelLike = Union[bool, int, str, MachineCondition]


def anomaly_labels(labels: Sequence[LabelLike]) -> np.ndarray:
    """Map labels (bool, 0/1, "normal"/"anomalous") to a boolean anomaly mask."""
    out = np.empty(len(labels), dtype=bool)
    for i, label in enumerate(labels):
        if isinstance(label, (str, MachineCondition)):
            value = str(getattr(label, "value", label)).lower()
            if value not in ("normal", "anomalous", "abnormal", "anomaly"):
                raise EvaluationError(f"Unknown label: {label}")
            out[i] = value != "normal"
        else:
            if label not in (0, 1):
                raise EvaluationError(f"Unknown label: {label}")
            out[i] = bool(label)
    return out


def compute_auc(scores: Sequence[float], labels: Sequence[LabelLike]) -> float:
    """
    ROC AUC as the Mann-Whitney statistic.

    (#pairs with anomaly > normal + 0.5 * #tied pairs) / (#anomalous * #normal),
    computed from average ranks in O(n log n). Higher scores mean more anomalous.

    Raises:
        EvaluationError: length mismatch, non-finite scores or a single class
    """
    values = np.asarray(scores, dtype=np.float64)
    anomalous = anomaly_labels(labels)
    if values.shape != anomalous.shape:
        raise EvaluationError(f"{values.size} scores for {anomalous.size} labels")
    if not np.all(np.isfinite(values)):
        raise EvaluationError("Scores must be finite")

    n_anomalous = int(anomalous.sum())
    n_normal = int(anomalous.size - n_anomalous)
    if n_anomalous == 0 or n_normal == 0:
        raise EvaluationError(
            f"AUC needs both classes, got {n_normal} normal and {n_anomalous} anomalous scores"
        )

    ranks = rankdata(values, method="average")
    u_statistic = ranks[anomalous].sum() - n_anomalous * (n_anomalous + 1) / 2.0
    return float(u_statistic / (n_anomalous * n_normal))
