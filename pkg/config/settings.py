"""
Pydantic Settings - every tunable of the pipeline in one flat, validated class.

Values come from (highest priority first) ASD_-prefixed environment
variables, the key=value config file passed to load_settings() (same ASD_
keys), and the defaults below, which follow the full-scale setup (128 Mel
bins, 3 conformer blocks, 80 + 40 epochs, batch 28, lr 1e-3, s = 16,
m = 1.28).

Usage:
    from config.settings import load_settings
    settings = load_settings("config/toy.env")
    encoder_cfg = settings.encoder()
"""

import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from augmentation.augment import AugmentationConfig
from augmentation.kinds import AugmentationKind
from evaluation.visualize import TsneConfig
from models.encoder import EncoderConfig
from models.heads import HeadConfig
from scoring.statistics import ScorerConfig
from signal_frontend.features import FrontendConfig
from signal_frontend.synth import SynthesisConfig
from training.trainer import TrainConfig
from utils.errors import ConfigurationError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="ASD_",
        env_file=None,
        env_file_encoding="utf-8",
        extra="ignore",
        case_sensitive=False,
    )

    # Runtime
    seed: int = 0
    log_file: Optional[str] = None
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    num_workers: int = Field(default=4, ge=1, le=64)
    # decoded training clips kept in memory per machine type; 0 disables the cache
    audio_cache_size: int = Field(default=0, ge=0)
    manifest_layout: Literal["mimii", "dcase", "flat_csv"] = "mimii"

    # Frontend (log-Mel)
    sample_rate: int = Field(default=16000, gt=0)
    fft_size: int = Field(default=1024, gt=1)
    hop: int = Field(default=512, gt=0)
    n_mels: int = Field(default=128, gt=0)
    fmin: float = Field(default=0.0, ge=0.0)
    fmax: float = Field(default=8000.0, gt=0.0)
    log_floor: float = Field(default=1e-10, gt=0.0)
    normalize_features: bool = False

    # Synthetic corpus
    synth_fundamentals: Dict[str, List[float]] = Field(
        default_factory=lambda: {"fan": [150.0, 300.0], "pump": [700.0, 1100.0]}
    )
    synth_n_normal: int = Field(default=20, ge=2)
    synth_n_test_normal: int = Field(default=5, ge=0)
    synth_n_anomalous: int = Field(default=10, ge=0)
    synth_n_harmonics: int = Field(default=6, ge=2, le=20)
    synth_duration: float = Field(default=10.0, gt=0.0)
    synth_snr_db: float = 6.0

    # Augmentation
    aug_kinds: List[AugmentationKind] = Field(default_factory=lambda: list(AugmentationKind))
    aug_pitch_max_semitones: float = Field(default=2.0, gt=0.0)
    aug_shift_max_seconds: float = Field(default=1.0, gt=0.0)
    aug_stretch_min: float = Field(default=0.9, gt=0.0)
    aug_stretch_max: float = Field(default=1.1, gt=0.0)
    aug_fade_min: float = Field(default=0.1, gt=0.0, le=1.0)
    aug_fade_max: float = Field(default=0.5, gt=0.0, le=1.0)
    aug_noise_snr_min: float = 6.0
    aug_noise_snr_max: float = 20.0
    aug_time_mask_max: int = Field(default=32, ge=1)
    aug_freq_mask_max: int = Field(default=16, ge=1)

    # Encoder
    n_blocks: int = Field(default=3, ge=1)
    ffn_units: int = Field(default=512, gt=0)
    attention_heads: int = Field(default=4, ge=1)
    model_dim: int = Field(default=128, gt=0)
    conv_kernel: int = Field(default=7, ge=1)
    conv_norm: Literal["batch", "layer"] = "batch"
    embedding_dim: int = Field(default=64, gt=0)
    attention_units: int = Field(default=64, gt=0)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    positional_encoding: bool = False

    # Heads
    arcface_scale: float = Field(default=16.0, gt=0.0)
    arcface_margin: float = Field(default=1.28, ge=0.0)

    # Training
    stage1_epochs: int = Field(default=80, ge=0)
    stage2_epochs: int = Field(default=40, ge=0)
    batch_size: int = Field(default=28, ge=2)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    alpha: float = Field(default=1.0, ge=0.0)
    beta: float = Field(default=1.0, ge=0.0)
    reset_optimizer_between_stages: bool = True
    stage1_aug_loss: bool = True
    aug_feeds_primary_losses: bool = True
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    id_loss_reduction: Literal["sum", "mean"] = "sum"
    type_loss_reduction: Literal["sum", "mean"] = "sum"
    aug_loss_reduction: Literal["sum", "mean"] = "sum"

    # Scorer
    covariance_eps_scale: float = Field(default=1e-3, ge=0.0)
    covariance_eps_floor: float = Field(default=1e-6, ge=0.0)
    std_floor: float = Field(default=1e-12, gt=0.0)

    # t-SNE
    tsne_perplexity: float = Field(default=30.0, gt=0.0)
    tsne_max_iter: int = Field(default=1000, ge=250)

    @field_validator("max_grad_norm", mode="before")
    @classmethod
    def empty_grad_norm(cls, v):
        # an empty value in the config file means "no clipping"
        if isinstance(v, str) and v.strip().lower() in ("", "none", "off"):
            return None
        return v

    @field_validator("log_level", mode="before")
    @classmethod
    def upper_log_level(cls, v):
        return v.upper() if isinstance(v, str) else v

    @model_validator(mode="after")
    def check_consistency(self):
        if self.fmax <= self.fmin:
            raise ValueError(f"fmax ({self.fmax}) must exceed fmin ({self.fmin})")
        if self.model_dim % self.attention_heads:
            raise ValueError("model_dim must be divisible by attention_heads")
        if self.batch_size % 2:
            raise ValueError(f"batch_size must be even for balanced stage-2 batches, got {self.batch_size}")
        return self

    @property
    def log_level_value(self) -> int:
        return getattr(logging, self.log_level)

    # ----------------------------------------------------------------------
    # Domain configs
    # ----------------------------------------------------------------------

    def frontend(self) -> FrontendConfig:
        return FrontendConfig(
            sample_rate=self.sample_rate,
            fft_size=self.fft_size,
            hop=self.hop,
            n_mels=self.n_mels,
            fmin=self.fmin,
            fmax=self.fmax,
            log_floor=self.log_floor,
            normalize=self.normalize_features,
        )

    def synthesis(self) -> SynthesisConfig:
        return SynthesisConfig(
            fundamentals=self.synth_fundamentals,
            n_normal=self.synth_n_normal,
            n_test_normal=self.synth_n_test_normal,
            n_anomalous=self.synth_n_anomalous,
            n_harmonics=self.synth_n_harmonics,
            duration=self.synth_duration,
            sample_rate=self.sample_rate,
            snr_db=self.synth_snr_db,
        )

    def augmentation(self) -> AugmentationConfig:
        return AugmentationConfig(
            kinds=tuple(self.aug_kinds),
            pitch_max_semitones=self.aug_pitch_max_semitones,
            shift_max_seconds=self.aug_shift_max_seconds,
            stretch_min=self.aug_stretch_min,
            stretch_max=self.aug_stretch_max,
            fade_min=self.aug_fade_min,
            fade_max=self.aug_fade_max,
            noise_snr_min=self.aug_noise_snr_min,
            noise_snr_max=self.aug_noise_snr_max,
            time_mask_max=self.aug_time_mask_max,
            freq_mask_max=self.aug_freq_mask_max,
        )

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            input_dim=self.n_mels,
            n_blocks=self.n_blocks,
            ffn_units=self.ffn_units,
            attention_heads=self.attention_heads,
            model_dim=self.model_dim,
            conv_kernel=self.conv_kernel,
            conv_norm=self.conv_norm,
            pooled_dim=self.embedding_dim,
            attention_units=self.attention_units,
            dropout=self.dropout,
            positional_encoding=self.positional_encoding,
        )

    def heads(self) -> HeadConfig:
        return HeadConfig(embedding_dim=self.embedding_dim, scale=self.arcface_scale, margin=self.arcface_margin)

    def train(self, target_machine_type: Optional[str] = None) -> TrainConfig:
        return TrainConfig(
            target_machine_type=target_machine_type,
            stage1_epochs=self.stage1_epochs,
            stage2_epochs=self.stage2_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            alpha=self.alpha,
            beta=self.beta,
            reset_optimizer_between_stages=self.reset_optimizer_between_stages,
            stage1_aug_loss=self.stage1_aug_loss,
            aug_feeds_primary_losses=self.aug_feeds_primary_losses,
            max_grad_norm=self.max_grad_norm,
            id_loss_reduction=self.id_loss_reduction,
            type_loss_reduction=self.type_loss_reduction,
            aug_loss_reduction=self.aug_loss_reduction,
        )

    def scorer(self) -> ScorerConfig:
        return ScorerConfig(
            eps_scale=self.covariance_eps_scale,
            eps_floor=self.covariance_eps_floor,
            std_floor=self.std_floor,
        )

    def tsne(self) -> TsneConfig:
        return TsneConfig(perplexity=self.tsne_perplexity, max_iter=self.tsne_max_iter, seed=self.seed)


def load_settings(path: Optional[Union[str, Path]] = None, **overrides) -> Settings:
    """
    Load settings from an optional key=value config file plus overrides.

    Raises:
        ConfigurationError: missing file or invalid values
    """
    if path is not None and not Path(path).exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        return Settings(_env_file=str(path) if path is not None else None, **overrides)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e
