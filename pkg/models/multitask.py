"""
Encoder plus the three heads for one target machine type.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import torch
import torch.nn as nn
from torch import Tensor

from models.encoder import ConformerEncoder, EncoderConfig
from models.heads import ArcFaceHead, AugHead, HeadConfig, TypeHead
from models.losses import LossWeights, Reduction, arcface_loss, aug_loss, total_loss, type_loss
from utils.errors import CheckpointError, LossInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBreakdown:
    l_type: Tensor
    l_id: Tensor
    l_aug: Tensor
    total: Tensor
    id_empty: bool = False

    def as_floats(self) -> Dict[str, float]:
        return {
            "l_type": float(self.l_type.detach()),
            "l_id": float(self.l_id.detach()),
            "l_aug": float(self.l_aug.detach()),
            "total": float(self.total.detach()),
        }


class MultitaskModel(nn.Module):
    """
    Conformer encoder shared by the ID, type and augmentation heads.

    machine_ids lists the target type's IDs in class order; the ArcFace head
    has one anchor per entry.
    """

    def __init__(
        self,
        target_type: str,
        machine_ids: Sequence[int],
        encoder_cfg: EncoderConfig = EncoderConfig(),
        head_cfg: HeadConfig = HeadConfig(),
    ):
        super().__init__()
        if not machine_ids:
            raise ValueError(f"No machine IDs given for target type '{target_type}'")
        if head_cfg.embedding_dim != encoder_cfg.pooled_dim:
            raise ValueError(
                f"Head embedding_dim {head_cfg.embedding_dim} != encoder pooled_dim {encoder_cfg.pooled_dim}"
            )
        self.target_type = target_type
        self.machine_ids: List[int] = sorted(int(i) for i in machine_ids)
        self.head_cfg = head_cfg
        self.encoder = ConformerEncoder(encoder_cfg)
        self.arcface_head = ArcFaceHead(
            len(self.machine_ids), head_cfg.embedding_dim, head_cfg.scale, head_cfg.margin
        )
        self.type_head = TypeHead(head_cfg.embedding_dim)
        self.aug_head = AugHead(head_cfg.embedding_dim)

    def class_index(self, machine_id: int) -> int:
        try:
            return self.machine_ids.index(int(machine_id))
        except ValueError:
            raise LossInputError(
                f"Machine ID {machine_id} is not a known ID of '{self.target_type}' ({self.machine_ids})"
            ) from None

    def freeze_type_head(self) -> None:
        for param in self.type_head.parameters():
            param.requires_grad_(False)

    def unfreeze_type_head(self) -> None:
        for param in self.type_head.parameters():
            param.requires_grad_(True)

    def renormalize_anchors(self) -> None:
        self.arcface_head.renormalize_()

    def forward(self, features: Tensor) -> Tensor:
        return self.encoder(features)

    def compute_losses(
        self,
        features: Tensor,
        id_targets: Tensor,
        type_labels: Tensor,
        aug_labels: Tensor,
        stage: int,
        weights: LossWeights = LossWeights(),
        include_aug: bool = True,
        aug_feeds_primary: bool = True,
        id_reduction: Reduction = "sum",
        type_reduction: Reduction = "sum",
        aug_reduction: Reduction = "sum",
    ) -> LossBreakdown:
        """
        Forward a batch and evaluate every loss term.

        id_targets holds the ArcFace class index of target-type samples and -1
        for pseudo-anomalies, which take no part in the ID loss. With
        aug_feeds_primary off, augmented samples only train the augmentation
        head.
        """
        embeddings = self.encoder(features)

        primary = torch.ones_like(aug_labels, dtype=torch.bool)
        if not aug_feeds_primary:
            primary = aug_labels == 0

        id_mask = (id_targets >= 0) & primary
        id_term = arcface_loss(
            self.arcface_head(embeddings[id_mask], id_targets[id_mask]),
            id_targets[id_mask],
            reduction=id_reduction,
        )
        if id_term.empty:
            logger.warning("Batch without target-type samples; ID loss set to 0")

        if stage == 1:
            with torch.no_grad():
                l_type = type_loss(
                    self.type_head.probability(embeddings[primary]), type_labels[primary], type_reduction
                )
        else:
            l_type = type_loss(
                self.type_head.probability(embeddings[primary]), type_labels[primary], type_reduction
            )
        l_aug = aug_loss(self.aug_head(embeddings), aug_labels, aug_reduction)

        total = total_loss(l_type, id_term.value, l_aug, weights, stage, include_aug)
        return LossBreakdown(l_type=l_type, l_id=id_term.value, l_aug=l_aug, total=total, id_empty=id_term.empty)

    @torch.no_grad()
    def inference(self, features: Tensor) -> Dict[str, Tensor]:
        """Embeddings, type probabilities and margin-free ID logits in eval mode."""
        self.eval()
        embeddings = self.encoder(features)
        return {
            "embedding": embeddings,
            "type_prob": self.type_head.probability(embeddings),
            "id_logits": self.arcface_head(embeddings),
        }

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "target_type": self.target_type,
            "machine_ids": list(self.machine_ids),
            "head_config": self.head_cfg.model_dump(),
            "encoder": self.encoder.to_checkpoint(),
            "arcface_head": self.arcface_head.to_checkpoint(),
            "type_head": self.type_head.to_checkpoint(),
            "aug_head": self.aug_head.to_checkpoint(),
        }

    @classmethod
    def from_checkpoint(cls, sections: Dict[str, Any]) -> "MultitaskModel":
        missing = [k for k in ("target_type", "machine_ids", "encoder", "arcface_head", "type_head", "aug_head")
                   if k not in sections]
        if missing:
            raise CheckpointError(f"Checkpoint lacks sections {missing}")
        encoder = ConformerEncoder.from_checkpoint(sections["encoder"])
        head_cfg = HeadConfig(**sections.get("head_config", {"embedding_dim": encoder.cfg.pooled_dim}))
        model = cls(sections["target_type"], sections["machine_ids"], encoder.cfg, head_cfg)
        model.encoder = encoder
        model.arcface_head = ArcFaceHead.from_checkpoint(sections["arcface_head"])
        model.type_head = TypeHead.from_checkpoint(sections["type_head"])
        model.aug_head = AugHead.from_checkpoint(sections["aug_head"])
        if model.arcface_head.num_classes != len(model.machine_ids):
            raise CheckpointError(
                f"ArcFace head has {model.arcface_head.num_classes} anchors for {len(model.machine_ids)} IDs"
            )
        return model


def parameter_snapshot(module: nn.Module) -> Dict[str, Tensor]:
    """Detached copies of all parameters, for bitwise comparisons."""
    return {name: p.detach().clone() for name, p in module.named_parameters()}


def same_parameters(a: Dict[str, Tensor], b: Dict[str, Tensor]) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


