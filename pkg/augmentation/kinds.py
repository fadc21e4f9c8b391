"""
Augmentation kinds and their class ids.

The id table is part of the model contract: the augmentation head predicts
these ids, so the mapping never changes once a model is trained.

    none=0, pitch_shift=1, time_shift=2, time_stretch=3, fade_in=4,
    fade_out=5, white_noise=6, time_mask=7, freq_mask=8
"""

from enum import Enum
from typing import Dict, Tuple


class AugmentationKind(str, Enum):
    """Augmentations whose identity the auxiliary head learns to predict."""

    NONE = "none"
    PITCH_SHIFT = "pitch_shift"
    TIME_SHIFT = "time_shift"
    TIME_STRETCH = "time_stretch"
    FADE_IN = "fade_in"
    FADE_OUT = "fade_out"
    WHITE_NOISE = "white_noise"
    TIME_MASK = "time_mask"
    FREQ_MASK = "freq_mask"


AUGMENTATION_IDS: Dict[AugmentationKind, int] = {kind: index for index, kind in enumerate(AugmentationKind)}

NUM_AUGMENTATION_CLASSES = len(AUGMENTATION_IDS)

# Parameter name carried in AugmentationSpec.params for each kind
KIND_PARAMETER: Dict[AugmentationKind, str] = {
    AugmentationKind.PITCH_SHIFT: "semitones",
    AugmentationKind.TIME_SHIFT: "seconds",
    AugmentationKind.TIME_STRETCH: "rate",
    AugmentationKind.FADE_IN: "fraction",
    AugmentationKind.FADE_OUT: "fraction",
    AugmentationKind.WHITE_NOISE: "snr_db",
    AugmentationKind.TIME_MASK: "width",
    AugmentationKind.FREQ_MASK: "width",
}

SPECTRAL_KINDS: Tuple[AugmentationKind, ...] = (AugmentationKind.TIME_MASK, AugmentationKind.FREQ_MASK)


def augmentation_id(kind: AugmentationKind) -> int:
    """
    Class id of an augmentation kind.

    Args:
        kind: Augmentation kind (enum member or its string value)

    Returns:
        Integer id in [0, NUM_AUGMENTATION_CLASSES)
    """
    return AUGMENTATION_IDS[AugmentationKind(kind)]


def is_spectral(kind: AugmentationKind) -> bool:
    """Spectral kinds act on the log-Mel output instead of the waveform."""
    return AugmentationKind(kind) in SPECTRAL_KINDS
