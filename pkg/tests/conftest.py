"""Shared fixtures: tiny model configs and random feature tensors."""

import numpy as np
import pytest
import torch

from models.encoder import EncoderConfig
from models.heads import HeadConfig


@pytest.fixture
def tiny_encoder_cfg():
    return EncoderConfig(
        input_dim=16,
        n_blocks=1,
        ffn_units=32,
        attention_heads=2,
        model_dim=8,
        attention_units=8,
        pooled_dim=8,
        dropout=0.0,
    )


@pytest.fixture
def tiny_head_cfg():
    return HeadConfig(embedding_dim=8)


@pytest.fixture
def feature_batch():
    """Factory for (B, T, M) float32 feature tensors from a fixed seed."""

    def make(batch: int = 4, frames: int = 12, mels: int = 16, seed: int = 0) -> torch.Tensor:
        rng = np.random.default_rng(seed)
        return torch.as_tensor(rng.standard_normal((batch, frames, mels)), dtype=torch.float32)

    return make
