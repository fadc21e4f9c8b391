"""
Labeled augmentations for the auxiliary classification task.

One augmentation is applied per sample. Waveform kinds rewrite the samples;
time/frequency masking only records a band on the clip, which compute_log_mel
blanks out. Randomness needed at application time (noise, mask position) comes
from AugmentationSpec.rng_seed, so a spec fully determines its output.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import librosa
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from augmentation.kinds import KIND_PARAMETER, AugmentationKind, augmentation_id, is_spectral
from signal_frontend.audio import AudioClip
from signal_frontend.features import FrontendConfig, frame_count
from utils.errors import AugmentationError

logger = logging.getLogger(__name__)


class AugmentationConfig(BaseModel):
    """Sampling policy and admissible parameter ranges."""

    model_config = ConfigDict(frozen=True)

    kinds: Tuple[AugmentationKind, ...] = tuple(AugmentationKind)
    pitch_max_semitones: float = Field(default=2.0, gt=0.0)
    shift_max_seconds: float = Field(default=1.0, gt=0.0)
    stretch_min: float = Field(default=0.9, gt=0.0)
    stretch_max: float = Field(default=1.1, gt=0.0)
    fade_min: float = Field(default=0.1, gt=0.0, le=1.0)
    fade_max: float = Field(default=0.5, gt=0.0, le=1.0)
    noise_snr_min: float = 6.0
    noise_snr_max: float = 20.0
    time_mask_max: int = Field(default=32, ge=1)
    freq_mask_max: int = Field(default=16, ge=1)

    @field_validator("kinds")
    @classmethod
    def validate_kinds(cls, v: Tuple[AugmentationKind, ...]) -> Tuple[AugmentationKind, ...]:
        if not v:
            raise ValueError("At least one augmentation kind must be enabled")
        # keep id order so sampling does not depend on how the list was written
        return tuple(sorted(set(AugmentationKind(k) for k in v), key=augmentation_id))

    @model_validator(mode="after")
    def validate_ranges(self):
        for low, high in (
            ("stretch_min", "stretch_max"),
            ("fade_min", "fade_max"),
            ("noise_snr_min", "noise_snr_max"),
        ):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} must not exceed {high}")
        return self

    def parameter_range(self, kind: AugmentationKind) -> Tuple[float, float]:
        """Closed interval a kind's parameter must fall in."""
        ranges = {
            AugmentationKind.PITCH_SHIFT: (-self.pitch_max_semitones, self.pitch_max_semitones),
            AugmentationKind.TIME_SHIFT: (-self.shift_max_seconds, self.shift_max_seconds),
            AugmentationKind.TIME_STRETCH: (self.stretch_min, self.stretch_max),
            AugmentationKind.FADE_IN: (self.fade_min, self.fade_max),
            AugmentationKind.FADE_OUT: (self.fade_min, self.fade_max),
            AugmentationKind.WHITE_NOISE: (self.noise_snr_min, self.noise_snr_max),
            AugmentationKind.TIME_MASK: (1, self.time_mask_max),
            AugmentationKind.FREQ_MASK: (1, self.freq_mask_max),
        }
        return ranges[AugmentationKind(kind)]


@dataclass(frozen=True)
class AugmentationSpec:
    kind: AugmentationKind
    params: Dict[str, float] = field(default_factory=dict)
    rng_seed: int = 0

    @property
    def augmentation_id(self) -> int:
        return augmentation_id(self.kind)


def _validated_parameter(spec: AugmentationSpec, cfg: AugmentationConfig) -> float:
    name = KIND_PARAMETER[spec.kind]
    if name not in spec.params:
        raise AugmentationError(f"{spec.kind.value} requires parameter '{name}'")
    value = float(spec.params[name])
    low, high = cfg.parameter_range(spec.kind)
    if not (low <= value <= high) or not np.isfinite(value):
        raise AugmentationError(f"{spec.kind.value}.{name}={value} outside [{low}, {high}]")
    return value


def _fit_length(samples: np.ndarray, length: int) -> np.ndarray:
    if samples.size >= length:
        return samples[:length]
    return np.pad(samples, (0, length - samples.size))


def _add_white_noise(samples: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(samples.size)
    clean_power = np.mean(samples ** 2)
    if clean_power == 0.0:
        return samples.copy()
    noise *= np.sqrt(clean_power / (10.0 ** (snr_db / 10.0)) / np.mean(noise ** 2))
    return samples + noise


def apply_augmentation(
    clip: AudioClip,
    spec: AugmentationSpec,
    cfg: AugmentationConfig = AugmentationConfig(),
    frontend: FrontendConfig = FrontendConfig(),
) -> AudioClip:
    """
    Apply one augmentation and stamp its id on the clip.

    The output keeps the input's duration and labels. Samples pushed beyond
    [-1, 1] are clipped and counted in clipped_samples.

    Raises:
        AugmentationError: unknown kind, missing or out-of-range parameter
    """
    try:
        kind = AugmentationKind(spec.kind)
    except ValueError as e:
        raise AugmentationError(f"Unknown augmentation kind: {spec.kind}") from e
    spec = replace(spec, kind=kind)
    if kind == AugmentationKind.NONE:
        return clip

    value = _validated_parameter(spec, cfg)
    rng = np.random.default_rng(spec.rng_seed)
    samples = clip.samples
    n, sr = clip.num_samples, clip.sample_rate
    time_mask, freq_mask = clip.time_mask, clip.freq_mask

    if kind == AugmentationKind.PITCH_SHIFT:
        samples = _fit_length(librosa.effects.pitch_shift(samples, sr=sr, n_steps=value), n)
    elif kind == AugmentationKind.TIME_SHIFT:
        samples = np.roll(samples, int(round(value * sr)))
    elif kind == AugmentationKind.TIME_STRETCH:
        samples = _fit_length(librosa.effects.time_stretch(samples, rate=value), n)
    elif kind == AugmentationKind.FADE_IN:
        ramp_len = max(int(round(value * n)), 1)
        gain = np.ones(n)
        gain[:ramp_len] = np.linspace(0.0, 1.0, ramp_len)
        samples = samples * gain
    elif kind == AugmentationKind.FADE_OUT:
        ramp_len = max(int(round(value * n)), 1)
        gain = np.ones(n)
        gain[n - ramp_len:] = np.linspace(1.0, 0.0, ramp_len)
        samples = samples * gain
    elif kind == AugmentationKind.WHITE_NOISE:
        samples = _add_white_noise(samples, value, rng)
    elif kind == AugmentationKind.TIME_MASK:
        width = int(value)
        total = frame_count(n, frontend.hop, frontend.fft_size, frontend.center)
        if width > total:
            raise AugmentationError(f"time_mask width {width} exceeds {total} frames")
        time_mask = (int(rng.integers(0, total - width + 1)), width)
    elif kind == AugmentationKind.FREQ_MASK:
        width = int(value)
        if width > frontend.n_mels:
            raise AugmentationError(f"freq_mask width {width} exceeds {frontend.n_mels} Mel bins")
        freq_mask = (int(rng.integers(0, frontend.n_mels - width + 1)), width)

    over = int(np.count_nonzero(np.abs(samples) > 1.0))
    if over:
        logger.debug(f"{kind.value} clipped {over} samples")
        samples = np.clip(samples, -1.0, 1.0)

    return replace(
        clip,
        samples=samples,
        augmentation_id=spec.augmentation_id,
        time_mask=time_mask,
        freq_mask=freq_mask,
        clipped_samples=clip.clipped_samples + over,
    )


def sample_augmentation(rng: np.random.Generator, cfg: AugmentationConfig = AugmentationConfig()) -> AugmentationSpec:
    """
    Draw a kind uniformly from the enabled kinds and its parameter uniformly
    from the configured range. The caller owns the generator.
    """
    kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
    params: Dict[str, float] = {}
    if kind != AugmentationKind.NONE:
        low, high = cfg.parameter_range(kind)
        if is_spectral(kind):
            params[KIND_PARAMETER[kind]] = int(rng.integers(int(low), int(high) + 1))
        else:
            params[KIND_PARAMETER[kind]] = float(rng.uniform(low, high))
    return AugmentationSpec(kind=kind, params=params, rng_seed=int(rng.integers(0, 2**31 - 1)))
