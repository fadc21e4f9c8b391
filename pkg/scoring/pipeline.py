"""
Fitting and applying the scorer of one trained per-type model.

fit_scorer embeds the training normals of the target type, fits the normal
statistics and the standardization of the three raw scores, and selects the
score combination. score_entries turns clips into rows of the score CSV.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from models.multitask import MultitaskModel
from scoring.combination import CombinationSpec, combined_score, select_combination
from scoring.scores import SCORE_KINDS, StandardizationParams, score_arc, score_out, standardize
from scoring.statistics import NormalStatistics, ScorerConfig, fit_normal_statistics
from signal_frontend.audio import MachineCondition, load_clip
from signal_frontend.features import FrontendConfig, compute_log_mel
from signal_frontend.manifest import DatasetManifest, ManifestEntry, Split
from utils.errors import CheckpointError, InsufficientDataError

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["path", "machine_type", "machine_id", "a_out", "a_arc", "a_maha", "combined"]


@dataclass(frozen=True)
class ModelOutputs:
    embeddings: np.ndarray   # (n, d)
    type_prob: np.ndarray    # (n,)
    id_logits: np.ndarray    # (n, K), margin-free


@dataclass
class ScorerState:
    statistics: NormalStatistics
    standardization: StandardizationParams
    combination: CombinationSpec
    config: ScorerConfig = ScorerConfig()

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "statistics": self.statistics.to_dict(),
            "standardization": self.standardization.to_dict(),
            "combination": self.combination.to_dict(),
            "config": self.config.model_dump(),
        }

    @classmethod
    def from_checkpoint(cls, entry: Optional[Mapping[str, Any]]) -> "ScorerState":
        if not entry:
            raise CheckpointError("Checkpoint has no scorer section; run fit-stats first")
        return cls(
            statistics=NormalStatistics.from_dict(entry["statistics"]),
            standardization=StandardizationParams.from_dict(entry["standardization"]),
            combination=CombinationSpec.from_dict(entry["combination"]),
            config=ScorerConfig(**entry.get("config", {})),
        )


def extract_features(
    manifest: DatasetManifest,
    entries: Sequence[ManifestEntry],
    frontend: FrontendConfig,
    max_workers: int = 4,
) -> np.ndarray:
    """(n, T, M) log-Mel features of unaugmented clips, in entry order."""

    def _one(entry: ManifestEntry) -> np.ndarray:
        clip = load_clip(
            manifest.resolve(entry),
            sample_rate=frontend.sample_rate,
            machine_type=entry.machine_type,
            machine_id=entry.machine_id,
            condition=entry.condition,
        )
        return compute_log_mel(clip, frontend).frames

    with ThreadPoolExecutor(max_workers=max(int(max_workers), 1)) as pool:
        frames = list(pool.map(_one, entries))
    return np.stack(frames).astype(np.float32)


def run_model(model: MultitaskModel, features: np.ndarray, batch_size: int = 32) -> ModelOutputs:
    dtype = next(model.parameters()).dtype
    embeddings, probs, logits = [], [], []
    for start in range(0, len(features), batch_size):
        out = model.inference(torch.as_tensor(features[start:start + batch_size], dtype=dtype))
        embeddings.append(out["embedding"].double().numpy())
        probs.append(out["type_prob"].double().numpy())
        logits.append(out["id_logits"].double().numpy())
    return ModelOutputs(np.concatenate(embeddings), np.concatenate(probs), np.concatenate(logits))


def raw_scores(
    model: MultitaskModel,
    outputs: ModelOutputs,
    machine_ids: Sequence[int],
    statistics: NormalStatistics,
) -> Dict[str, np.ndarray]:
    """a_out, a_arc and a_maha for every row of outputs, against the claimed IDs."""
    ids = np.asarray(machine_ids, dtype=np.int64)
    claimed = np.array([model.class_index(i) for i in ids], dtype=np.int64)
    maha = np.empty(len(ids))
    for machine_id in np.unique(ids):
        mask = ids == machine_id
        maha[mask] = statistics.score(model.target_type, int(machine_id), outputs.embeddings[mask])
    return {
        "out": np.atleast_1d(score_out(outputs.type_prob)),
        "arc": np.atleast_1d(score_arc(outputs.id_logits, claimed)),
        "maha": maha,
    }


def standardized_scores(
    scores: Mapping[str, np.ndarray], machine_ids: Sequence[int], params: StandardizationParams
) -> Dict[str, np.ndarray]:
    ids = np.asarray(machine_ids, dtype=np.int64)
    return {kind: standardize(scores[kind], params, ids, kind) for kind in SCORE_KINDS}


def fit_scorer(
    model: MultitaskModel,
    manifest: DatasetManifest,
    frontend: FrontendConfig = FrontendConfig(),
    cfg: ScorerConfig = ScorerConfig(),
    validation_manifest: Optional[DatasetManifest] = None,
    max_workers: int = 4,
) -> ScorerState:
    """
    Fit statistics, standardization and combination on the target type's
    training normals (and optional labeled validation clips).
    """
    machine_type = model.target_type
    entries = manifest.select(machine_type=machine_type, split=Split.TRAIN, condition=MachineCondition.NORMAL)
    if not entries:
        raise InsufficientDataError(f"No training normals for '{machine_type}'")
    ids = np.array([e.machine_id for e in entries], dtype=np.int64)
    outputs = run_model(model, extract_features(manifest, entries, frontend, max_workers))

    statistics = fit_normal_statistics(
        {(machine_type, int(i)): outputs.embeddings[ids == i] for i in np.unique(ids)}, cfg
    )
    train_scores = raw_scores(model, outputs, ids, statistics)
    standardization = StandardizationParams.fit(ids, train_scores, cfg.std_floor)

    combination = CombinationSpec(SCORE_KINDS)
    if validation_manifest is not None:
        val_entries = validation_manifest.select(machine_type=machine_type)
        if val_entries:
            val_ids = np.array([e.machine_id for e in val_entries], dtype=np.int64)
            val_outputs = run_model(model, extract_features(validation_manifest, val_entries, frontend, max_workers))
            val_z = standardized_scores(raw_scores(model, val_outputs, val_ids, statistics), val_ids, standardization)
            combination = select_combination(val_z, [e.is_anomalous for e in val_entries], groups=val_ids)
        else:
            logger.warning(f"Validation manifest has no '{machine_type}' clips; combining all scores")
    else:
        combination = select_combination()

    logger.info(
        f"Scorer for '{machine_type}' fitted on {len(entries)} normals, "
        f"{len(statistics.groups)} IDs, combination {'+'.join(combination.kinds)}"
    )
    return ScorerState(statistics, standardization, combination, cfg)


def score_entries(
    model: MultitaskModel,
    scorer: ScorerState,
    manifest: DatasetManifest,
    entries: Sequence[ManifestEntry],
    frontend: FrontendConfig = FrontendConfig(),
    max_workers: int = 4,
) -> pd.DataFrame:
    """Rows of the score CSV: raw scores plus the combined standardized score."""
    if not entries:
        return pd.DataFrame(columns=SCORE_COLUMNS)
    ids = np.array([e.machine_id for e in entries], dtype=np.int64)
    outputs = run_model(model, extract_features(manifest, entries, frontend, max_workers))
    scores = raw_scores(model, outputs, ids, scorer.statistics)
    z = standardized_scores(scores, ids, scorer.standardization)
    combined = np.atleast_1d(combined_score(z, scorer.combination))

    return pd.DataFrame({
        "path": [e.path for e in entries],
        "machine_type": [e.machine_type for e in entries],
        "machine_id": ids,
        "a_out": scores["out"],
        "a_arc": scores["arc"],
        "a_maha": scores["maha"],
        "combined": combined,
    }, columns=SCORE_COLUMNS)


def write_scores(frame: pd.DataFrame, path: Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.10g")
    return out

