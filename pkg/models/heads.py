"""
Classifier heads on top of the 64-d embedding.

    ArcFaceHead   machine-ID classifier with unit-norm anchors, scale s, margin m
    TypeHead      target type vs. pseudo-anomaly, sigmoid output
    AugHead       augmentation id classifier (plain logits)
"""

import logging
import math
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import Tensor

from augmentation.kinds import NUM_AUGMENTATION_CLASSES
from models.encoder import init_fan_in_uniform
from utils.errors import CheckpointError, LossInputError

logger = logging.getLogger(__name__)

HEAD_FORMAT_VERSION = 1

COSINE_CLAMP = 1e-7
PROBABILITY_EPS = 1e-7


class HeadConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    embedding_dim: int = Field(default=64, gt=0)
    scale: float = Field(default=16.0, gt=0.0)
    margin: float = Field(default=1.28, ge=0.0)

    @field_validator("margin")
    @classmethod
    def validate_margin(cls, v: float) -> float:
        if v >= math.pi:
            raise ValueError(f"ArcFace margin must be below pi radians, got {v}")
        return v


class ArcFaceHead(nn.Module):
    """
    Additive angular margin classifier over K machine IDs.

    Anchors are rows of a K x D matrix kept at unit norm; there is no bias.
    Training logits put s*cos(theta + m) on the target class and s*cos(theta)
    elsewhere. When theta + m passes pi the target logit continues linearly as
    s*(-1 - (theta + m - pi)*sin(m)) so the loss stays monotone in theta.
    """

    def __init__(self, num_classes: int, embedding_dim: int = 64, scale: float = 16.0, margin: float = 1.28):
        super().__init__()
        if num_classes < 1:
            raise ValueError(f"ArcFace head needs at least one class, got {num_classes}")
        HeadConfig(embedding_dim=embedding_dim, scale=scale, margin=margin)
        self.num_classes = num_classes
        self.embedding_dim = embedding_dim
        self.scale = scale
        self.margin = margin
        self.anchors = nn.Parameter(torch.empty(num_classes, embedding_dim))
        nn.init.normal_(self.anchors)
        self.renormalize_()

    @torch.no_grad()
    def renormalize_(self) -> None:
        """Project every anchor back onto the unit sphere."""
        self.anchors.copy_(F.normalize(self.anchors, dim=1))

    def cosine(self, embeddings: Tensor) -> Tensor:
        norms = embeddings.norm(dim=1)
        if (norms == 0).any():
            raise LossInputError("Zero-norm embedding passed to the ArcFace head")
        cos = F.linear(F.normalize(embeddings, dim=1), F.normalize(self.anchors, dim=1))
        return cos.clamp(-1.0 + COSINE_CLAMP, 1.0 - COSINE_CLAMP)

    def forward(self, embeddings: Tensor, targets: Optional[Tensor] = None) -> Tensor:
        cos = self.cosine(embeddings)
        if targets is None:
            return self.scale * cos

        targets = targets.long()
        if targets.numel() and (targets.min() < 0 or targets.max() >= self.num_classes):
            raise LossInputError(f"ArcFace target outside [0, {self.num_classes})")
        theta = torch.acos(cos.gather(1, targets[:, None]))
        shifted = theta + self.margin
        target_cos = torch.where(
            shifted <= math.pi,
            torch.cos(shifted),
            -1.0 - (shifted - math.pi) * math.sin(self.margin),
        )
        return self.scale * cos.scatter(1, targets[:, None], target_cos)

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "version": HEAD_FORMAT_VERSION,
            "num_classes": self.num_classes,
            "embedding_dim": self.embedding_dim,
            "scale": self.scale,
            "margin": self.margin,
            "state_dict": self.state_dict(),
        }

    @classmethod
    def from_checkpoint(cls, entry: Dict[str, Any]) -> "ArcFaceHead":
        _check_version(entry, "arcface_head")
        head = cls(entry["num_classes"], entry["embedding_dim"], entry["scale"], entry["margin"])
        _load_state(head, entry, "arcface_head")
        return head


class TypeHead(nn.Module):
    """Linear logit for "belongs to the target machine type"."""

    def __init__(self, embedding_dim: int = 64):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.linear = nn.Linear(embedding_dim, 1)
        init_fan_in_uniform(self)

    def forward(self, embeddings: Tensor) -> Tensor:
        return self.linear(embeddings).squeeze(-1)

    def probability(self, embeddings: Tensor) -> Tensor:
        """Sigmoid output clamped strictly inside (0, 1)."""
        return torch.sigmoid(self(embeddings)).clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)

    def to_checkpoint(self) -> Dict[str, Any]:
        return {"version": HEAD_FORMAT_VERSION, "embedding_dim": self.embedding_dim, "state_dict": self.state_dict()}

    @classmethod
    def from_checkpoint(cls, entry: Dict[str, Any]) -> "TypeHead":
        _check_version(entry, "type_head")
        head = cls(entry["embedding_dim"])
        _load_state(head, entry, "type_head")
        return head


class AugHead(nn.Module):
    def __init__(self, embedding_dim: int = 64, num_classes: int = NUM_AUGMENTATION_CLASSES):
        super().__init__()
        if num_classes != NUM_AUGMENTATION_CLASSES:
            raise ValueError(
                f"Augmentation head must have {NUM_AUGMENTATION_CLASSES} classes, got {num_classes}"
            )
        self.embedding_dim = embedding_dim
        self.num_classes = num_classes
        self.linear = nn.Linear(embedding_dim, num_classes)
        init_fan_in_uniform(self)

    def forward(self, embeddings: Tensor) -> Tensor:
        return self.linear(embeddings)

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "version": HEAD_FORMAT_VERSION,
            "embedding_dim": self.embedding_dim,
            "num_classes": self.num_classes,
            "state_dict": self.state_dict(),
        }

    @classmethod
    def from_checkpoint(cls, entry: Dict[str, Any]) -> "AugHead":
        _check_version(entry, "aug_head")
        head = cls(entry["embedding_dim"], entry["num_classes"])
        _load_state(head, entry, "aug_head")
        return head


def _check_version(entry: Dict[str, Any], name: str) -> None:
    if entry.get("version") != HEAD_FORMAT_VERSION:
        raise CheckpointError(f"Unsupported {name} entry version: {entry.get('version')}")


def _load_state(module: nn.Module, entry: Dict[str, Any], name: str) -> None:
    try:
        module.load_state_dict(entry["state_dict"], strict=True)
    except (RuntimeError, KeyError) as e:
        raise CheckpointError(f"{name} weights do not match the stored shape: {e}") from e


def arcface_logits(
    x: Union[Tensor, np.ndarray],
    head: ArcFaceHead,
    target: Optional[int] = None,
) -> Tensor:
    """
    Logits of a single embedding against all K anchors.

    With target=None the margin-free inference form s*cos(theta) is returned.

    Raises:
        LossInputError: zero-norm or non-finite embedding, target outside [0, K)
    """
    emb = torch.as_tensor(x, dtype=head.anchors.dtype)
    if not torch.isfinite(emb).all():
        raise LossInputError("Non-finite embedding passed to the ArcFace head")
    targets = None if target is None else torch.tensor([int(target)])
    return head(emb.reshape(1, -1), targets).squeeze(0)
