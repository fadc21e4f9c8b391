"""
Audio clip container and WAV I/O.

Clips are immutable: augmentations and mixing return new AudioClip objects via
dataclasses.replace, so a clip can be shared between worker threads.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import soundfile as sf

from utils.errors import AudioFormatError

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_DURATION = 10.0


class MachineCondition(str, Enum):
    """Ground-truth state of the recorded machine."""

    NORMAL = "normal"
    ANOMALOUS = "anomalous"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class AudioClip:
    """Mono PCM recording plus the labels it was collected under.

    time_mask / freq_mask are (start, width) bands that compute_log_mel
    blanks out; they are how spectral augmentations travel with a waveform.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    duration: float = DEFAULT_DURATION
    machine_type: str = "unknown"
    machine_id: int = 0
    condition: MachineCondition = MachineCondition.UNKNOWN
    augmentation_id: int = 0
    time_mask: Optional[Tuple[int, int]] = None
    freq_mask: Optional[Tuple[int, int]] = None
    clipped_samples: int = 0
    path: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioFormatError(f"AudioClip expects mono samples, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "condition", MachineCondition(self.condition))

        expected = int(round(self.sample_rate * self.duration))
        if samples.size != expected:
            raise AudioFormatError(
                f"Clip has {samples.size} samples but {self.duration}s at {self.sample_rate} Hz "
                f"requires {expected}"
            )
        if not np.all(np.isfinite(samples)):
            raise AudioFormatError("Clip contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise AudioFormatError("Clip samples exceed the [-1, 1] range")

    @classmethod
    def from_samples(cls, samples: np.ndarray, sample_rate: int = DEFAULT_SAMPLE_RATE, **labels) -> "AudioClip":
        """Build a clip whose duration is taken from the sample count."""
        samples = np.asarray(samples, dtype=np.float64)
        return cls(samples=samples, sample_rate=sample_rate, duration=samples.size / sample_rate, **labels)

    @property
    def num_samples(self) -> int:
        return int(self.samples.size)


def load_clip(
    path: Union[str, Path],
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    machine_type: str = "unknown",
    machine_id: int = 0,
    condition: Union[str, MachineCondition] = MachineCondition.UNKNOWN,
) -> AudioClip:
    """
    Read a WAV file into an AudioClip.

    16-bit and float PCM are accepted; stereo (or wider) files are downmixed by
    averaging the channels. Only the configured sample rate is accepted.

    Raises:
        AudioFormatError: wrong sample rate, empty file or unreadable content
    """
    try:
        data, file_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise AudioFormatError(f"Cannot read audio file {path}: {e}") from e

    if file_rate != sample_rate:
        raise AudioFormatError(f"{path}: sample rate {file_rate} Hz, expected {sample_rate} Hz")
    if data.shape[0] == 0:
        raise AudioFormatError(f"{path}: file contains no samples")

    mono = data.mean(axis=1) if data.shape[1] > 1 else data[:, 0]
    mono = np.clip(mono, -1.0, 1.0)
    return AudioClip.from_samples(
        mono,
        sample_rate=sample_rate,
        machine_type=machine_type,
        machine_id=machine_id,
        condition=condition,
        path=str(path),
    )


def save_clip(clip: AudioClip, path: Union[str, Path], subtype: str = "PCM_16") -> Path:
    """Write a clip as a mono WAV file, creating parent directories."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(out), clip.samples, clip.sample_rate, subtype=subtype)
    return out
