"""
Two-stage inside-out training.

Stage 1 trains the encoder with the ID (and augmentation) heads on target-type
normals while the type head stays frozen. Stage 2 unfreezes the type head and
mixes pseudo-anomalies (other machine types) into every batch.

A checkpoint is written after every epoch so a run can resume mid-stage and
reproduce the uninterrupted loss trajectory.
"""

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field

from models.losses import LossWeights
from models.multitask import MultitaskModel
from training.batching import BatchComposer, steps_per_epoch
from training.checkpoint import save_checkpoint
from training.data import FeatureSource
from utils.errors import BatchCompositionError, CheckpointError, TrainingDivergedError

logger = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ["epoch", "stage", "l_type", "l_id", "l_aug", "total"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    target_machine_type: Optional[str] = None
    stage1_epochs: int = Field(default=80, ge=0)
    stage2_epochs: int = Field(default=40, ge=0)
    batch_size: int = Field(default=28, ge=2)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    seed: int = 0
    alpha: float = Field(default=1.0, ge=0.0)
    beta: float = Field(default=1.0, ge=0.0)
    reset_optimizer_between_stages: bool = True
    stage1_aug_loss: bool = True
    aug_feeds_primary_losses: bool = True
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    id_loss_reduction: Literal["sum", "mean"] = "sum"
    type_loss_reduction: Literal["sum", "mean"] = "sum"
    aug_loss_reduction: Literal["sum", "mean"] = "sum"

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta)

    def epochs(self, stage: int) -> int:
        return self.stage1_epochs if stage == 1 else self.stage2_epochs


class Trainer:
    """Runs both training stages for one MultitaskModel."""

    def __init__(
        self,
        model: MultitaskModel,
        source: FeatureSource,
        cfg: TrainConfig = TrainConfig(),
        checkpoint_path: Optional[Union[str, Path]] = None,
        log_path: Optional[Union[str, Path]] = None,
        resume_from: Optional[Dict[str, Any]] = None,
    ):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.model = model
        self.source = source
        self.cfg = cfg
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.log_path = Path(log_path) if log_path else None

        unknown = sorted(set(source.pools.machine_ids) - set(model.machine_ids))
        if unknown:
            raise BatchCompositionError(
                f"Training data has machine IDs {unknown} unknown to the model ({model.machine_ids})"
            )

        self.composer = BatchComposer(source.pools, cfg.batch_size)
        self.rng = np.random.default_rng(cfg.seed)
        self.stage = 0
        self.epoch = 0
        self.complete = False
        self.optimizer: Optional[torch.optim.Optimizer] = None

        if resume_from is not None:
            self._restore(resume_from)
        else:
            torch.manual_seed(cfg.seed)
            if self.log_path and self.log_path.exists():
                self.log_path.unlink()

    # ----------------------------------------------------------------------
    # Optimizer handling
    # ----------------------------------------------------------------------

    def _adam(self, groups: List[Dict[str, Any]]) -> torch.optim.Optimizer:
        return torch.optim.Adam(
            groups,
            lr=self.cfg.learning_rate,
            betas=(self.cfg.adam_beta1, self.cfg.adam_beta2),
            eps=self.cfg.adam_eps,
        )

    def _stage_one_params(self) -> List[torch.nn.Parameter]:
        type_ids = {id(p) for p in self.model.type_head.parameters()}
        return [p for p in self.model.parameters() if id(p) not in type_ids]

    def _optimizer_for(self, stage: int) -> torch.optim.Optimizer:
        if stage == 1:
            return self._adam([{"params": self._stage_one_params()}])
        if self.cfg.reset_optimizer_between_stages:
            return self._adam([{"params": list(self.model.parameters())}])
        return self._adam([
            {"params": self._stage_one_params()},
            {"params": list(self.model.type_head.parameters())},
        ])

    def _enter_stage(self, stage: int) -> None:
        if stage == 1:
            self.model.freeze_type_head()
            self.optimizer = self._optimizer_for(1)
        else:
            self.model.unfreeze_type_head()
            if self.optimizer is None or self.cfg.reset_optimizer_between_stages:
                self.optimizer = self._optimizer_for(2)
            else:
                self.optimizer.add_param_group({"params": list(self.model.type_head.parameters())})
        self.stage = stage
        self.epoch = 0
        self.logger.info(
            f"Stage {stage} for '{self.model.target_type}': {self.cfg.epochs(stage)} epochs, "
            f"{steps_per_epoch(self.source.pools, stage, self.cfg.batch_size)} steps per epoch"
        )

    # ----------------------------------------------------------------------
    # Training loop
    # ----------------------------------------------------------------------

    def _train_epoch(self, stage: int) -> Dict[str, float]:
        cfg = self.cfg
        dtype = next(self.model.parameters()).dtype
        trainable = [p for p in self.model.parameters() if p.requires_grad]
        steps = steps_per_epoch(self.source.pools, stage, cfg.batch_size)
        sums = {"l_type": 0.0, "l_id": 0.0, "l_aug": 0.0, "total": 0.0}

        self.model.train()
        self.composer.start_epoch()
        for batch_index in range(steps):
            plan = self.composer.next(stage, self.rng)
            batch = self.source.load(plan, self.rng)
            id_targets = torch.tensor(
                [self.model.class_index(m) if m >= 0 else -1 for m in batch.machine_ids], dtype=torch.long
            )
            losses = self.model.compute_losses(
                torch.as_tensor(batch.features, dtype=dtype),
                id_targets,
                torch.as_tensor(batch.type_labels, dtype=dtype),
                torch.as_tensor(batch.aug_labels, dtype=torch.long),
                stage=stage,
                weights=cfg.loss_weights,
                include_aug=stage == 2 or cfg.stage1_aug_loss,
                aug_feeds_primary=cfg.aug_feeds_primary_losses,
                id_reduction=cfg.id_loss_reduction,
                type_reduction=cfg.type_loss_reduction,
                aug_reduction=cfg.aug_loss_reduction,
            )
            values = losses.as_floats()
            if not all(math.isfinite(v) for v in values.values()):
                raise TrainingDivergedError(
                    f"Non-finite loss in stage {stage}, epoch {self.epoch + 1}, batch {batch_index}: {values}",
                    epoch=self.epoch + 1,
                    batch=batch_index,
                    components=values,
                )

            self.optimizer.zero_grad()
            losses.total.backward()
            if cfg.max_grad_norm is not None:
                torch.nn.utils.clip_grad_norm_(trainable, cfg.max_grad_norm)
            self.optimizer.step()
            self.model.renormalize_anchors()

            for key, value in values.items():
                sums[key] += value

        return {key: value / steps for key, value in sums.items()}

    def run_stage(self, stage: int) -> MultitaskModel:
        if stage not in (1, 2):
            raise ValueError(f"Stage must be 1 or 2, got {stage}")
        if self.stage != stage:
            self._enter_stage(stage)

        epochs = self.cfg.epochs(stage)
        while self.epoch < epochs:
            means = self._train_epoch(stage)
            self.epoch += 1
            self._record_epoch(stage, means)
            if stage == 2 and self.epoch == epochs:
                self.complete = True
            self._save()

        if stage == 2 and not self.complete:
            self.complete = True
            self._save()
        return self.model

    def fit(self) -> MultitaskModel:
        """Run whatever remains of stage 1 and stage 2."""
        if self.stage <= 1:
            self.run_stage(1)
        return self.run_stage(2)

    # ----------------------------------------------------------------------
    # Logging and persistence
    # ----------------------------------------------------------------------

    def _record_epoch(self, stage: int, means: Dict[str, float]) -> None:
        self.logger.info(
            f"[{self.model.target_type}] stage {stage} epoch {self.epoch}/{self.cfg.epochs(stage)} "
            f"l_type={means['l_type']:.4f} l_id={means['l_id']:.4f} "
            f"l_aug={means['l_aug']:.4f} total={means['total']:.4f}"
        )
        if self.log_path is None:
            return
        row = pd.DataFrame([{"epoch": self.epoch, "stage": stage, **means}], columns=LOSS_LOG_COLUMNS)
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        row.to_csv(self.log_path, mode="a", header=not self.log_path.exists(), index=False, float_format="%.10g")

    def state(self) -> Dict[str, Any]:
        return {
            "model": self.model.to_checkpoint(),
            "optimizer": self.optimizer.state_dict() if self.optimizer is not None else None,
            "train_config": self.cfg.model_dump(),
            "rng": {"numpy": self.rng.bit_generator.state, "torch": torch.get_rng_state()},
            "composer": self.composer.state(),
            "stage": self.stage,
            "epoch": self.epoch,
            "complete": self.complete,
        }

    def _save(self) -> None:
        if self.checkpoint_path is not None:
            save_checkpoint(self.state(), self.checkpoint_path)

    def _restore(self, payload: Dict[str, Any]) -> None:
        """Continue from a checkpoint whose model sections were already loaded into self.model."""
        try:
            self.stage = int(payload["stage"])
            self.epoch = int(payload["epoch"])
            self.complete = bool(payload.get("complete", False))
            self.rng.bit_generator.state = payload["rng"]["numpy"]
            torch.set_rng_state(payload["rng"]["torch"])
            self.composer.load_state(payload.get("composer"))
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"Checkpoint lacks resumable training state: {e}") from e

        if self.stage in (1, 2):
            if self.stage == 1:
                self.model.freeze_type_head()
            else:
                self.model.unfreeze_type_head()
            self.optimizer = self._optimizer_for(self.stage)
            if payload.get("optimizer") is not None:
                self.optimizer.load_state_dict(payload["optimizer"])
        self.logger.info(f"Resuming '{self.model.target_type}' at stage {self.stage}, epoch {self.epoch}")


def train_stage1(
    model: MultitaskModel,
    data: FeatureSource,
    cfg: TrainConfig = TrainConfig(),
    **trainer_kwargs,
) -> MultitaskModel:
    """Stage 1 only: type head frozen, target-type normals only."""
    return Trainer(model, data, cfg, **trainer_kwargs).run_stage(1)


def train_stage2(
    model: MultitaskModel,
    data: FeatureSource,
    cfg: TrainConfig = TrainConfig(),
    **trainer_kwargs,
) -> MultitaskModel:
    """Stage 2 only, starting from stage-1 weights with a fresh optimizer."""
    return Trainer(model, data, cfg, **trainer_kwargs).run_stage(2)
