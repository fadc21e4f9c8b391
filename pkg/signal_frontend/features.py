"""
Log-Mel feature extraction.

Frames are computed with a periodic Hann window, reflect-padded centered STFT
and an HTK Mel filterbank. The frame count depends only on the sample count,
the hop and the padding policy: T = 1 + len // hop when centered.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import librosa
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from signal_frontend.audio import AudioClip
from utils.errors import FeatureExtractionError

logger = logging.getLogger(__name__)


class FrontendConfig(BaseModel):
    """STFT / Mel settings shared by training, fitting and scoring."""

    model_config = ConfigDict(frozen=True)

    sample_rate: int = Field(default=16000, gt=0)
    fft_size: int = Field(default=1024, gt=1)
    hop: int = Field(default=512, gt=0)
    n_mels: int = Field(default=128, gt=0)
    fmin: float = Field(default=0.0, ge=0.0)
    fmax: float = Field(default=8000.0, gt=0.0)
    log_floor: float = Field(default=1e-10, gt=0.0)
    center: bool = True
    htk: bool = True
    normalize: bool = False

    @model_validator(mode="after")
    def _check_band(self):
        if self.fmax <= self.fmin:
            raise ValueError(f"fmax ({self.fmax}) must exceed fmin ({self.fmin})")
        if self.fmax > self.sample_rate / 2:
            raise ValueError(f"fmax ({self.fmax}) exceeds the Nyquist frequency {self.sample_rate / 2}")
        return self


@dataclass(frozen=True)
class LogMelSpectrogram:
    """T x M matrix of log-Mel energies."""

    frames: np.ndarray
    frame_hop: int
    fft_size: int
    log_floor: float

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def num_mels(self) -> int:
        return int(self.frames.shape[1])


def frame_count(num_samples: int, hop: int, fft_size: int = 1024, center: bool = True) -> int:
    """Number of STFT frames for a signal of num_samples samples."""
    if center:
        return 1 + num_samples // hop
    if num_samples < fft_size:
        return 0
    return 1 + (num_samples - fft_size) // hop


@lru_cache(maxsize=16)
def _mel_basis(sample_rate: int, fft_size: int, n_mels: int, fmin: float, fmax: float, htk: bool) -> np.ndarray:
    return librosa.filters.mel(
        sr=sample_rate, n_fft=fft_size, n_mels=n_mels, fmin=fmin, fmax=fmax, htk=htk, dtype=np.float64
    )


def mel_band_edges(cfg: FrontendConfig) -> np.ndarray:
    """
    Frequencies (Hz) of the n_mels + 2 triangle corners.

    Filter k rises from edges[k], peaks at edges[k + 1] and falls to edges[k + 2].
    """
    return librosa.mel_frequencies(n_mels=cfg.n_mels + 2, fmin=cfg.fmin, fmax=cfg.fmax, htk=cfg.htk)


def apply_spectral_masks(
    frames: np.ndarray,
    log_floor: float,
    time_mask: Optional[tuple] = None,
    freq_mask: Optional[tuple] = None,
) -> np.ndarray:
    """Blank out (start, width) bands along time and/or frequency."""
    floor_value = np.log(log_floor)
    if time_mask is not None:
        start, width = time_mask
        frames[start:start + width, :] = floor_value
    if freq_mask is not None:
        start, width = freq_mask
        frames[:, start:start + width] = floor_value
    return frames


def compute_log_mel(clip: AudioClip, cfg: FrontendConfig) -> LogMelSpectrogram:
    """
    Compute the T x n_mels log-Mel spectrogram of a clip.

    Masks recorded on the clip by spectral augmentations are applied to the
    output. Pure function: identical input gives bit-identical output.

    Raises:
        FeatureExtractionError: sample-rate mismatch, clip shorter than one FFT
                                window, or non-finite samples
    """
    if clip.sample_rate != cfg.sample_rate:
        raise FeatureExtractionError(
            f"Clip sample rate {clip.sample_rate} Hz does not match frontend rate {cfg.sample_rate} Hz"
        )
    samples = clip.samples
    if samples.size == 0:
        raise FeatureExtractionError("Cannot extract features from an empty clip")
    if samples.size < cfg.fft_size:
        raise FeatureExtractionError(
            f"Clip has {samples.size} samples, shorter than one FFT window ({cfg.fft_size})"
        )
    if not np.all(np.isfinite(samples)):
        raise FeatureExtractionError("Clip contains NaN or Inf samples")

    stft = librosa.stft(
        samples,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop,
        window="hann",
        center=cfg.center,
        pad_mode="reflect",
    )
    power = np.abs(stft) ** 2
    mel = _mel_basis(cfg.sample_rate, cfg.fft_size, cfg.n_mels, cfg.fmin, cfg.fmax, cfg.htk) @ power
    frames = np.ascontiguousarray(np.log(np.maximum(mel, cfg.log_floor)).T)

    if cfg.normalize:
        frames = (frames - frames.mean()) / max(frames.std(), 1e-8)

    frames = apply_spectral_masks(frames, cfg.log_floor, clip.time_mask, clip.freq_mask)
    return LogMelSpectrogram(frames=frames, frame_hop=cfg.hop, fft_size=cfg.fft_size, log_floor=cfg.log_floor)
