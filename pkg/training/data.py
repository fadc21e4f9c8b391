"""
Feature sources feeding the trainer.

A source turns a BatchPlan into a (B, T, M) feature array plus augmentation
labels. Every random draw goes through the trainer's generator in plan order,
so a batch depends only on the generator state; the parallel part (waveform
augmentation and log-Mel extraction) receives fully drawn specs and returns
results in submission order.
"""

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from cachetools import LRUCache

from augmentation.augment import AugmentationConfig, AugmentationSpec, apply_augmentation, sample_augmentation
from augmentation.kinds import AugmentationKind
from signal_frontend.audio import AudioClip, load_clip
from signal_frontend.features import FrontendConfig, compute_log_mel
from signal_frontend.manifest import DatasetManifest, ManifestEntry
from training.batching import BatchPlan, TrainingPools, training_entries
from utils.errors import BatchCompositionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureBatch:
    features: np.ndarray        # (B, T, M)
    machine_ids: np.ndarray     # target machine ID per sample, -1 for pseudo-anomalies
    type_labels: np.ndarray     # 1 = target type, 0 = pseudo-anomaly
    aug_labels: np.ndarray      # augmentation id per sample


class FeatureSource(ABC):
    """Produces training batches for one target machine type."""

    @property
    @abstractmethod
    def pools(self) -> TrainingPools:
        ...

    @abstractmethod
    def load(self, plan: BatchPlan, rng: np.random.Generator) -> FeatureBatch:
        ...

    def _labels(self, plan: BatchPlan):
        machine_ids = np.array(list(plan.normal_ids) + [-1] * len(plan.pseudo_indices), dtype=np.int64)
        type_labels = (machine_ids >= 0).astype(np.float64)
        return machine_ids, type_labels


class TensorFeatureSource(FeatureSource):
    """
    Precomputed features held in memory.

    Augmentation labels default to 0 (unaugmented) unless given per sample.
    """

    def __init__(
        self,
        normal_features: np.ndarray,
        normal_ids: Sequence[int],
        pseudo_features: Optional[np.ndarray] = None,
        normal_aug_labels: Optional[Sequence[int]] = None,
        pseudo_aug_labels: Optional[Sequence[int]] = None,
    ):
        self.normal_features = np.asarray(normal_features, dtype=np.float32)
        if self.normal_features.ndim != 3 or len(self.normal_features) != len(normal_ids):
            raise BatchCompositionError("normal_features must be (N, T, M) with one machine ID per row")
        self.pseudo_features = (
            np.asarray(pseudo_features, dtype=np.float32) if pseudo_features is not None
            else np.zeros((0,) + self.normal_features.shape[1:], dtype=np.float32)
        )
        self.normal_aug = np.zeros(len(self.normal_features), dtype=np.int64) if normal_aug_labels is None \
            else np.asarray(normal_aug_labels, dtype=np.int64)
        self.pseudo_aug = np.zeros(len(self.pseudo_features), dtype=np.int64) if pseudo_aug_labels is None \
            else np.asarray(pseudo_aug_labels, dtype=np.int64)
        self._pools = TrainingPools.from_ids(normal_ids, num_pseudo=len(self.pseudo_features))

    @property
    def pools(self) -> TrainingPools:
        return self._pools

    def load(self, plan: BatchPlan, rng: np.random.Generator) -> FeatureBatch:
        normal_idx = list(plan.normal_indices)
        pseudo_idx = list(plan.pseudo_indices)
        features = np.concatenate([self.normal_features[normal_idx], self.pseudo_features[pseudo_idx]])
        aug = np.concatenate([self.normal_aug[normal_idx], self.pseudo_aug[pseudo_idx]])
        machine_ids, type_labels = self._labels(plan)
        return FeatureBatch(features, machine_ids, type_labels, aug)


class WaveformFeatureSource(FeatureSource):
    """
    Reads WAV files, applies one sampled augmentation per sample and computes
    log-Mel features on a thread pool.

    cache_size bounds the number of decoded clips kept between batches
    (least recently used first out); 0 decodes every clip on every use.
    """

    def __init__(
        self,
        normal_entries: Sequence[ManifestEntry],
        pseudo_entries: Sequence[ManifestEntry],
        root: Path,
        frontend: FrontendConfig = FrontendConfig(),
        aug_cfg: AugmentationConfig = AugmentationConfig(),
        augment: bool = True,
        max_workers: int = 4,
        cache_size: int = 0,
    ):
        if not normal_entries:
            raise BatchCompositionError("No training normals for the target machine type")
        self.normal_entries = list(normal_entries)
        self.pseudo_entries = list(pseudo_entries)
        self.root = Path(root)
        self.frontend = frontend
        self.aug_cfg = aug_cfg
        self.augment = augment
        self.max_workers = max(int(max_workers), 1)
        self._cache: Optional[LRUCache] = LRUCache(maxsize=cache_size) if cache_size > 0 else None
        self._pools = TrainingPools.from_ids(
            [e.machine_id for e in self.normal_entries], num_pseudo=len(self.pseudo_entries)
        )

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, target_type: str, **kwargs) -> "WaveformFeatureSource":
        normals, pseudo = training_entries(manifest, target_type)
        logger.info(
            f"Training pools for '{target_type}': {len(normals)} normals, {len(pseudo)} pseudo-anomalies"
        )
        return cls(normals, pseudo, manifest.root, **kwargs)

    @property
    def pools(self) -> TrainingPools:
        return self._pools

    @property
    def cached_clips(self) -> int:
        return 0 if self._cache is None else len(self._cache)

    def _clip(self, entry: ManifestEntry) -> AudioClip:
        clip = None if self._cache is None else self._cache.get(entry.path)
        if clip is None:
            path = Path(entry.path)
            clip = load_clip(
                path if path.is_absolute() else self.root / path,
                sample_rate=self.frontend.sample_rate,
                machine_type=entry.machine_type,
                machine_id=entry.machine_id,
                condition=entry.condition,
            )
            if self._cache is not None:
                self._cache[entry.path] = clip
        return clip

    def _features(self, clip: AudioClip, spec: AugmentationSpec) -> np.ndarray:
        clip = apply_augmentation(clip, spec, self.aug_cfg, self.frontend)
        return compute_log_mel(clip, self.frontend).frames

    def load(self, plan: BatchPlan, rng: np.random.Generator) -> FeatureBatch:
        entries: List[ManifestEntry] = [self.normal_entries[i] for i in plan.normal_indices]
        entries += [self.pseudo_entries[i] for i in plan.pseudo_indices]
        if self.augment:
            specs = [sample_augmentation(rng, self.aug_cfg) for _ in entries]
        else:
            specs = [AugmentationSpec(kind=AugmentationKind.NONE) for _ in entries]

        # decoding stays on this thread; the cache is not thread-safe
        clips = [self._clip(entry) for entry in entries]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            frames = list(pool.map(self._features, clips, specs))

        machine_ids, type_labels = self._labels(plan)
        aug = np.array([s.augmentation_id for s in specs], dtype=np.int64)
        return FeatureBatch(np.stack(frames).astype(np.float32), machine_ids, type_labels, aug)
