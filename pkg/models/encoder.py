"""
Conformer encoder with attentive statistics pooling.

    log-Mel (B, T, M)
        -> linear stem M -> model_dim, dropout          (no subsampling)
        -> n_blocks x ConformerBlock                    (no positional encoding)
        -> attentive statistics pooling -> pooled_dim   (the embedding)

Block layout follows the Macaron conformer: FFN (half-step residual) ->
MHSA -> Conv -> FFN (half-step residual) -> LayerNorm.
"""

import logging
import math
from typing import Any, Dict, Literal, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import Tensor

from utils.errors import CheckpointError, NonFiniteActivationError, ShapeMismatchError

logger = logging.getLogger(__name__)

ENCODER_FORMAT_VERSION = 1


class EncoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(default=128, gt=0)
    n_blocks: int = Field(default=3, ge=1)
    ffn_units: int = Field(default=512, gt=0)
    attention_heads: int = Field(default=4, ge=1)
    model_dim: int = Field(default=128, gt=0)
    conv_kernel: int = Field(default=7, ge=1)
    conv_norm: Literal["batch", "layer"] = "batch"
    pooled_dim: int = Field(default=64, gt=0)
    attention_units: int = Field(default=64, gt=0)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    positional_encoding: bool = False
    pool_eps: float = Field(default=1e-6, gt=0.0)

    @model_validator(mode="after")
    def _check_dims(self):
        if self.model_dim % self.attention_heads:
            raise ValueError(
                f"model_dim ({self.model_dim}) must be divisible by attention_heads ({self.attention_heads})"
            )
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd for same padding, got {self.conv_kernel}")
        return self


def init_fan_in_uniform(module: nn.Module) -> None:
    """Re-initialise every weight and bias as U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    for sub in module.modules():
        if isinstance(sub, (nn.Linear, nn.Conv1d)):
            fan_in = sub.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(sub.weight, -bound, bound)
            if sub.bias is not None:
                nn.init.uniform_(sub.bias, -bound, bound)
        elif isinstance(sub, nn.MultiheadAttention) and sub.in_proj_weight is not None:
            bound = 1.0 / math.sqrt(sub.in_proj_weight.shape[1])
            nn.init.uniform_(sub.in_proj_weight, -bound, bound)
            if sub.in_proj_bias is not None:
                nn.init.uniform_(sub.in_proj_bias, -bound, bound)


class ResidualConnectionModule(nn.Module):
    """outputs = module(inputs) * module_factor + inputs"""

    def __init__(self, module: nn.Module, module_factor: float = 1.0):
        super().__init__()
        self.module = module
        self.module_factor = module_factor

    def forward(self, inputs: Tensor) -> Tensor:
        return self.module(inputs) * self.module_factor + inputs


class FeedForwardModule(nn.Module):
    def __init__(self, model_dim: int, ffn_units: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(model_dim)
        self.fc1 = nn.Linear(model_dim, ffn_units)
        self.act = nn.SiLU()
        self.drop1 = nn.Dropout(dropout)
        self.fc2 = nn.Linear(ffn_units, model_dim)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, inputs: Tensor) -> Tensor:
        x = self.drop1(self.act(self.fc1(self.norm(inputs))))
        return self.drop2(self.fc2(x))


class MultiHeadedSelfAttentionModule(nn.Module):
    """Pre-norm MHSA without positional encoding."""

    def __init__(self, model_dim: int, num_heads: int, dropout: float):
        super().__init__()
        self.layer_norm = nn.LayerNorm(model_dim)
        self.attention = nn.MultiheadAttention(model_dim, num_heads, dropout=dropout, batch_first=True)
        self.dropout = nn.Dropout(dropout)

    def forward(self, inputs: Tensor) -> Tensor:
        x = self.layer_norm(inputs)
        x, _ = self.attention(x, x, x, need_weights=False)
        return self.dropout(x)


class ConformerConvModule(nn.Module):
    """LN -> pointwise conv + GLU -> depthwise conv -> norm -> SiLU -> pointwise conv -> dropout"""

    def __init__(self, model_dim: int, kernel_size: int, dropout: float, norm: str = "batch"):
        super().__init__()
        self.ln = nn.LayerNorm(model_dim)
        self.pointwise_in = nn.Conv1d(model_dim, model_dim * 2, kernel_size=1)
        self.depthwise = nn.Conv1d(
            model_dim, model_dim, kernel_size=kernel_size, groups=model_dim,
            padding=(kernel_size - 1) // 2, bias=False,
        )
        self.norm_kind = norm
        self.norm = nn.BatchNorm1d(model_dim) if norm == "batch" else nn.LayerNorm(model_dim)
        self.act = nn.SiLU()
        self.pointwise_out = nn.Conv1d(model_dim, model_dim, kernel_size=1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, inputs: Tensor) -> Tensor:
        x = self.ln(inputs).transpose(1, 2)  # [B, T, C] -> [B, C, T]
        x = F.glu(self.pointwise_in(x), dim=1)
        x = self.depthwise(x)
        if self.norm_kind == "batch":
            x = self.norm(x)
        else:
            x = self.norm(x.transpose(1, 2)).transpose(1, 2)
        x = self.pointwise_out(self.act(x))
        return self.dropout(x).transpose(1, 2)


class ConformerBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ffn1 = ResidualConnectionModule(
            FeedForwardModule(cfg.model_dim, cfg.ffn_units, cfg.dropout), module_factor=0.5
        )
        self.attn = ResidualConnectionModule(
            MultiHeadedSelfAttentionModule(cfg.model_dim, cfg.attention_heads, cfg.dropout)
        )
        self.conv = ResidualConnectionModule(
            ConformerConvModule(cfg.model_dim, cfg.conv_kernel, cfg.dropout, cfg.conv_norm)
        )
        self.ffn2 = ResidualConnectionModule(
            FeedForwardModule(cfg.model_dim, cfg.ffn_units, cfg.dropout), module_factor=0.5
        )
        self.ln = nn.LayerNorm(cfg.model_dim)

    def forward(self, inputs: Tensor) -> Tensor:
        x = self.ffn1(inputs)
        x = self.attn(x)
        x = self.conv(x)
        x = self.ffn2(x)
        return self.ln(x)


class AttentiveStatPool(nn.Module):
    """
    Attention-weighted mean and standard deviation over time.

    A tanh scorer gives one logit per frame, softmax over time gives weights
    w_t >= 0 summing to 1; the output is Linear(concat(mean, std)) with
    std = sqrt(max(var, 0) + eps).
    """

    def __init__(self, in_dim: int, out_dim: int, attention_units: int = 64, eps: float = 1e-6):
        super().__init__()
        self.scorer = nn.Sequential(
            nn.Linear(in_dim, attention_units),
            nn.Tanh(),
            nn.Linear(attention_units, 1, bias=False),
        )
        self.projection = nn.Linear(2 * in_dim, out_dim)
        self.eps = eps

    def attention_weights(self, frames: Tensor) -> Tensor:
        """(B, T, D) -> (B, T) softmax weights."""
        return torch.softmax(self.scorer(frames).squeeze(-1), dim=1)

    def moments(self, frames: Tensor, weights: Tensor) -> Tensor:
        """Weighted mean and std, concatenated: (B, T, D), (B, T) -> (B, 2D)."""
        w = weights.unsqueeze(-1)
        mean = torch.sum(w * frames, dim=1)
        var = torch.sum(w * frames ** 2, dim=1) - mean ** 2
        std = torch.sqrt(var.clamp(min=0.0) + self.eps)
        return torch.cat([mean, std], dim=-1)

    def forward(self, frames: Tensor) -> Tensor:
        if frames.shape[1] == 0:
            raise ShapeMismatchError("Attentive pooling needs at least one frame")
        return self.projection(self.moments(frames, self.attention_weights(frames)))


def attentive_stat_pool(frames: Union[Tensor, np.ndarray], pool: AttentiveStatPool) -> Tensor:
    """Pool a single T x D frame matrix into a pooled vector."""
    x = torch.as_tensor(frames, dtype=next(pool.parameters()).dtype)
    if x.ndim != 2:
        raise ShapeMismatchError(f"Expected a T x D matrix, got shape {tuple(x.shape)}")
    return pool(x.unsqueeze(0)).squeeze(0)


def _sinusoidal_encoding(length: int, dim: int, device, dtype) -> Tensor:
    position = torch.arange(length, device=device, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, device=device, dtype=dtype) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, device=device, dtype=dtype)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : dim // 2]
    return table


class ConformerEncoder(nn.Module):
    """Maps (B, T, input_dim) log-Mel batches to (B, pooled_dim) embeddings."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig(), check_finite: bool = True):
        super().__init__()
        self.cfg = cfg
        self.check_finite = check_finite
        self.stem = nn.Sequential(nn.Linear(cfg.input_dim, cfg.model_dim), nn.Dropout(cfg.dropout))
        self.blocks = nn.ModuleList([ConformerBlock(cfg) for _ in range(cfg.n_blocks)])
        self.pool = AttentiveStatPool(cfg.model_dim, cfg.pooled_dim, cfg.attention_units, cfg.pool_eps)
        init_fan_in_uniform(self)

    def _check(self, x: Tensor, index: int, where: str) -> None:
        if self.check_finite and not torch.isfinite(x).all():
            raise NonFiniteActivationError(f"Non-finite activation after {where}", block_index=index)

    def frame_features(self, features: Tensor) -> Tensor:
        """Frame-level outputs of the last block, (B, T, model_dim)."""
        if features.ndim != 3 or features.shape[-1] != self.cfg.input_dim:
            raise ShapeMismatchError(
                f"Encoder expects (batch, frames, {self.cfg.input_dim}), got {tuple(features.shape)}"
            )
        if features.shape[1] == 0:
            raise ShapeMismatchError("Encoder input has zero frames")
        x = self.stem(features)
        if self.cfg.positional_encoding:
            x = x + _sinusoidal_encoding(x.shape[1], x.shape[2], x.device, x.dtype)
        self._check(x, -1, "stem")
        for index, block in enumerate(self.blocks):
            x = block(x)
            self._check(x, index, f"conformer block {index}")
        return x

    def forward(self, features: Tensor) -> Tensor:
        embedding = self.pool(self.frame_features(features))
        self._check(embedding, len(self.blocks), "pooling")
        return embedding

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "version": ENCODER_FORMAT_VERSION,
            "config": self.cfg.model_dump(),
            "state_dict": self.state_dict(),
        }

    @classmethod
    def from_checkpoint(cls, entry: Dict[str, Any]) -> "ConformerEncoder":
        """Rebuild from a checkpoint entry, validating version and tensor shapes."""
        if entry.get("version") != ENCODER_FORMAT_VERSION:
            raise CheckpointError(f"Unsupported encoder entry version: {entry.get('version')}")
        encoder = cls(EncoderConfig(**entry["config"]))
        try:
            encoder.load_state_dict(entry["state_dict"], strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"Encoder weights do not match the stored config: {e}") from e
        return encoder


def encoder_forward(
    features: Union[Tensor, np.ndarray],
    encoder: ConformerEncoder,
    mode: Literal["train", "eval"] = "eval",
) -> Tensor:
    """
    Embed one T x M spectrogram or a (B, T, M) batch.

    Eval mode disables dropout, uses running batch-norm statistics and runs
    without autograd, so identical inputs give identical embeddings.
    """
    x = torch.as_tensor(features, dtype=next(encoder.parameters()).dtype)
    single = x.ndim == 2
    if single:
        x = x.unsqueeze(0)
    encoder.train(mode == "train")
    if mode == "eval":
        with torch.no_grad():
            out = encoder(x)
    else:
        out = encoder(x)
    return out.squeeze(0) if single else out
