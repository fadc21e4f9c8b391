"""Loss terms of the three tasks and their weighted total."""

import logging
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor

from augmentation.kinds import NUM_AUGMENTATION_CLASSES
from utils.errors import LossInputError

logger = logging.getLogger(__name__)

Reduction = Literal["sum", "mean"]


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=1.0, ge=0.0)
    beta: float = Field(default=1.0, ge=0.0)


@dataclass(frozen=True)
class LossTerm:
    """A reduced loss together with how many samples contributed to it."""

    value: Tensor
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0


def _reduce(per_sample: Tensor, reduction: Reduction) -> Tensor:
    if reduction == "sum":
        return per_sample.sum()
    if reduction == "mean":
        return per_sample.mean()
    raise LossInputError(f"Unknown reduction: {reduction}")


def arcface_loss(logits: Tensor, targets: Tensor, reduction: Reduction = "sum") -> LossTerm:
    """
    Cross-entropy over margin-modified ArcFace logits.

    An empty batch (only pseudo-anomalies) yields a zero loss flagged empty.
    """
    if logits.shape[0] == 0:
        logger.debug("ArcFace loss over an empty batch")
        return LossTerm(value=logits.sum() * 0.0, count=0)
    targets = targets.long()
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise LossInputError(f"Machine-ID target outside [0, {logits.shape[1]})")
    per_sample = F.cross_entropy(logits, targets, reduction="none")
    return LossTerm(value=_reduce(per_sample, reduction), count=int(logits.shape[0]))


def type_loss(probs: Tensor, labels: Tensor, reduction: Reduction = "sum") -> Tensor:
    """
    Binary cross-entropy -[y log a + (1 - y) log(1 - a)].

    Raises:
        LossInputError: a probability outside the open interval (0, 1), or a
                        label other than 0/1
    """
    if ((probs <= 0) | (probs >= 1)).any():
        raise LossInputError("Type-head probabilities must lie strictly inside (0, 1)")
    labels = labels.to(probs.dtype)
    if ((labels != 0) & (labels != 1)).any():
        raise LossInputError("Type labels must be 0 or 1")
    per_sample = -(labels * torch.log(probs) + (1.0 - labels) * torch.log1p(-probs))
    return _reduce(per_sample, reduction)


def aug_loss(logits: Tensor, labels: Tensor, reduction: Reduction = "sum") -> Tensor:
    """Plain softmax cross-entropy over the augmentation ids."""
    labels = labels.long()
    if logits.shape[-1] != NUM_AUGMENTATION_CLASSES:
        raise LossInputError(
            f"Augmentation logits need {NUM_AUGMENTATION_CLASSES} classes, got {logits.shape[-1]}"
        )
    if labels.numel() and (labels.min() < 0 or labels.max() >= NUM_AUGMENTATION_CLASSES):
        raise LossInputError(f"Augmentation label outside [0, {NUM_AUGMENTATION_CLASSES})")
    return _reduce(F.cross_entropy(logits, labels, reduction="none"), reduction)


def total_loss(
    l_type: Tensor,
    l_id: Tensor,
    l_aug: Tensor,
    weights: LossWeights = LossWeights(),
    stage: int = 2,
    include_aug: bool = True,
) -> Tensor:
    """
    Stage 2: l_type + alpha*l_id + beta*l_aug.
    Stage 1: l_type is left out since the type head is frozen.
    """
    if stage not in (1, 2):
        raise LossInputError(f"Stage must be 1 or 2, got {stage}")
    total = weights.alpha * l_id
    if include_aug:
        total = total + weights.beta * l_aug
    if stage == 2:
        total = l_type + total
    return total
