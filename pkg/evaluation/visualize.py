"""t-SNE scatter of embeddings, one panel per machine type."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.manifold import TSNE

from utils.errors import EvaluationError

logger = logging.getLogger(__name__)


class TsneConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    perplexity: float = Field(default=30.0, gt=0.0)
    max_iter: int = Field(default=1000, ge=250)
    seed: int = 0
    dpi: int = Field(default=120, gt=0)


@dataclass
class TsneResult:
    path: Path
    coordinates: Dict[str, np.ndarray] = field(default_factory=dict)
    perplexity: Dict[str, float] = field(default_factory=dict)


def effective_perplexity(n_points: int, requested: float) -> float:
    """Largest usable perplexity for n_points, at most (n - 1) / 3."""
    limit = (n_points - 1) / 3.0
    if requested <= limit:
        return requested
    reduced = max(limit, 1.0)
    logger.warning(f"Perplexity {requested} too large for {n_points} points; using {reduced:.2f}")
    return reduced


def embed_2d(embeddings: np.ndarray, cfg: TsneConfig = TsneConfig(), perplexity: Optional[float] = None) -> np.ndarray:
    """
    2-D t-SNE coordinates of embeddings.

    A single point is placed at the origin with a warning; panels of two or
    three points start from a random init.

    Raises:
        EvaluationError: no points at all
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n_points = x.shape[0]
    if n_points == 0:
        raise EvaluationError("t-SNE needs at least one point")
    if n_points == 1:
        logger.warning("t-SNE got a single point; placing it at the origin")
        return np.zeros((1, 2))
    if perplexity is None:
        perplexity = effective_perplexity(n_points, cfg.perplexity)
    # sklearn requires perplexity < n_samples
    perplexity = min(perplexity, n_points - 0.5)
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        max_iter=cfg.max_iter,
        init="pca" if n_points > 3 else "random",
        random_state=cfg.seed,
    )
    return tsne.fit_transform(x)


def emit_tsne_plot(
    embeddings: np.ndarray,
    machine_types: Sequence[str],
    machine_ids: Sequence[int],
    anomalous: Sequence[bool],
    out_path: Union[str, Path],
    cfg: TsneConfig = TsneConfig(),
) -> TsneResult:
    """
    Write a PNG with one t-SNE panel per machine type, colored by machine ID,
    anomalies drawn as crosses. Perplexity and seed go to the figure title and
    the PNG Description metadata.

    Raises:
        EvaluationError: fewer than two machine IDs, or mismatched lengths
    """
    x = np.asarray(embeddings, dtype=np.float64)
    types = np.asarray(machine_types)
    ids = np.asarray(machine_ids, dtype=np.int64)
    anomalies = np.asarray(anomalous, dtype=bool)
    if not (len(x) == len(types) == len(ids) == len(anomalies)):
        raise EvaluationError("Embeddings and labels differ in length")
    if len({(t, i) for t, i in zip(types, ids)}) < 2:
        raise EvaluationError("t-SNE plot needs at least two machine IDs")

    result = TsneResult(path=Path(out_path))
    panel_types = sorted(set(types.tolist()))
    fig, axes = plt.subplots(1, len(panel_types), figsize=(5 * len(panel_types), 5), squeeze=False)
    cmap = plt.get_cmap("tab10")

    for ax, machine_type in zip(axes[0], panel_types):
        mask = types == machine_type
        result.perplexity[machine_type] = effective_perplexity(int(mask.sum()), cfg.perplexity)
        coords = embed_2d(x[mask], cfg, result.perplexity[machine_type])
        result.coordinates[machine_type] = coords
        type_ids, type_anom = ids[mask], anomalies[mask]
        for n, machine_id in enumerate(sorted(set(type_ids.tolist()))):
            color = cmap(n % 10)
            normal = (type_ids == machine_id) & ~type_anom
            abnormal = (type_ids == machine_id) & type_anom
            ax.scatter(coords[normal, 0], coords[normal, 1], s=12, color=color, marker="o",
                       label=f"id_{machine_id:02d}")
            if abnormal.any():
                ax.scatter(coords[abnormal, 0], coords[abnormal, 1], s=18, color=color, marker="x",
                           label=f"id_{machine_id:02d} anomalous")
        ax.set_title(machine_type)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.legend(fontsize="small", loc="best")

    caption = "; ".join(
        f"{t}: perplexity={result.perplexity[t]:.2f}" for t in panel_types
    ) + f"; seed={cfg.seed}; max_iter={cfg.max_iter}"
    fig.suptitle(f"t-SNE of embeddings ({caption})", fontsize="small")
    fig.tight_layout()
    result.path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(result.path, dpi=cfg.dpi, metadata={"Description": caption})
    plt.close(fig)
    logger.info(f"t-SNE plot written to {result.path}")
    return result
