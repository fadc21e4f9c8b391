"""
Tests for labeled augmentations.
"""

from collections import Counter

import numpy as np
import pytest

from augmentation.augment import (
    AugmentationConfig,
    AugmentationSpec,
    apply_augmentation,
    sample_augmentation,
)
from augmentation.kinds import (
    NUM_AUGMENTATION_CLASSES,
    AugmentationKind,
    augmentation_id,
    is_spectral,
)
from signal_frontend.audio import AudioClip, MachineCondition
from signal_frontend.features import FrontendConfig, compute_log_mel
from utils.errors import AugmentationError

SR = 16000

MID_PARAMS = {
    AugmentationKind.PITCH_SHIFT: {"semitones": 1.5},
    AugmentationKind.TIME_SHIFT: {"seconds": -0.25},
    AugmentationKind.TIME_STRETCH: {"rate": 0.9},
    AugmentationKind.FADE_IN: {"fraction": 0.3},
    AugmentationKind.FADE_OUT: {"fraction": 0.3},
    AugmentationKind.WHITE_NOISE: {"snr_db": 6.0},
    AugmentationKind.TIME_MASK: {"width": 8},
    AugmentationKind.FREQ_MASK: {"width": 8},
}


@pytest.fixture
def tone():
    t = np.arange(SR) / SR
    samples = 0.3 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 1320 * t)
    return AudioClip.from_samples(samples, machine_type="valve", machine_id=4, condition=MachineCondition.NORMAL)


class TestAugmentationKinds:
    """Tests for the fixed id table."""

    def test_ids_are_consecutive(self):
        assert augmentation_id(AugmentationKind.NONE) == 0
        assert augmentation_id("freq_mask") == 8
        assert sorted(augmentation_id(k) for k in AugmentationKind) == list(range(NUM_AUGMENTATION_CLASSES))

    def test_spectral_kinds(self):
        assert is_spectral(AugmentationKind.TIME_MASK)
        assert not is_spectral(AugmentationKind.WHITE_NOISE)


class TestApplyAugmentation:
    """Tests for apply_augmentation."""

    def test_none_is_identity(self, tone):
        out = apply_augmentation(tone, AugmentationSpec(AugmentationKind.NONE))
        assert np.array_equal(out.samples, tone.samples)
        assert out.augmentation_id == 0

    def test_white_noise_hits_target_snr(self, tone):
        out = apply_augmentation(
            tone, AugmentationSpec(AugmentationKind.WHITE_NOISE, {"snr_db": 10.0}, rng_seed=3)
        )
        noise = out.samples - tone.samples
        snr = 10 * np.log10(np.mean(tone.samples ** 2) / np.mean(noise ** 2))
        assert snr == pytest.approx(10.0, abs=0.5)

    def test_time_mask_blanks_one_band(self):
        """A 30-frame time mask leaves exactly one contiguous 30-frame floor band."""
        rng = np.random.default_rng(1)
        clip = AudioClip(samples=0.1 * rng.standard_normal(160000))
        frontend = FrontendConfig()
        out = apply_augmentation(
            clip, AugmentationSpec(AugmentationKind.TIME_MASK, {"width": 30}, rng_seed=5), frontend=frontend
        )
        frames = compute_log_mel(out, frontend).frames
        rows = np.flatnonzero(np.all(frames == np.log(frontend.log_floor), axis=1))
        assert len(rows) == 30
        assert rows[-1] - rows[0] == 29

    def test_freq_mask_recorded_on_clip(self, tone):
        out = apply_augmentation(tone, AugmentationSpec(AugmentationKind.FREQ_MASK, {"width": 8}, rng_seed=2))
        start, width = out.freq_mask
        assert width == 8
        assert 0 <= start <= 128 - 8
        assert np.array_equal(out.samples, tone.samples)

    @pytest.mark.parametrize("kind", list(MID_PARAMS))
    def test_labels_duration_and_range_preserved(self, tone, kind):
        out = apply_augmentation(tone, AugmentationSpec(kind, MID_PARAMS[kind], rng_seed=9))
        assert out.machine_type == "valve"
        assert out.machine_id == 4
        assert out.condition == MachineCondition.NORMAL
        assert out.num_samples == tone.num_samples
        assert out.augmentation_id == augmentation_id(kind)
        assert np.max(np.abs(out.samples)) <= 1.0

    @pytest.mark.parametrize("kind", list(MID_PARAMS))
    def test_deterministic(self, tone, kind):
        spec = AugmentationSpec(kind, MID_PARAMS[kind], rng_seed=4)
        assert np.array_equal(apply_augmentation(tone, spec).samples, apply_augmentation(tone, spec).samples)

    def test_loud_noise_is_clipped_and_counted(self):
        clip = AudioClip.from_samples(np.full(SR, 0.95))
        out = apply_augmentation(clip, AugmentationSpec(AugmentationKind.WHITE_NOISE, {"snr_db": 6.0}, rng_seed=0))
        assert out.clipped_samples > 0
        assert np.max(np.abs(out.samples)) <= 1.0

    def test_out_of_range_parameter(self, tone):
        with pytest.raises(AugmentationError, match="outside"):
            apply_augmentation(tone, AugmentationSpec(AugmentationKind.TIME_STRETCH, {"rate": 2.0}))

    def test_missing_parameter(self, tone):
        with pytest.raises(AugmentationError, match="requires parameter"):
            apply_augmentation(tone, AugmentationSpec(AugmentationKind.FADE_IN, {}))

    def test_unknown_kind(self, tone):
        with pytest.raises(AugmentationError, match="Unknown augmentation kind"):
            apply_augmentation(tone, AugmentationSpec("reverb", {}))


class TestSampleAugmentation:
    """Tests for the training-time sampling policy."""

    def test_kinds_roughly_uniform(self):
        rng = np.random.default_rng(0)
        counts = Counter(sample_augmentation(rng).kind for _ in range(9000))
        assert set(counts) == set(AugmentationKind)
        assert all(900 <= n <= 1100 for n in counts.values())

    def test_same_state_same_spec(self):
        first = [sample_augmentation(np.random.default_rng(5)) for _ in range(3)]
        assert first[0] == first[1] == first[2]

    def test_restricted_kinds(self):
        cfg = AugmentationConfig(kinds=("white_noise", "none"))
        rng = np.random.default_rng(2)
        ids = {sample_augmentation(rng, cfg).augmentation_id for _ in range(200)}
        assert ids == {0, augmentation_id(AugmentationKind.WHITE_NOISE)}

    def test_parameters_within_ranges(self):
        cfg = AugmentationConfig()
        rng = np.random.default_rng(8)
        for _ in range(500):
            spec = sample_augmentation(rng, cfg)
            if spec.kind == AugmentationKind.NONE:
                assert spec.params == {}
                continue
            (value,) = spec.params.values()
            low, high = cfg.parameter_range(spec.kind)
            assert low <= value <= high

    def test_empty_kind_list_rejected(self):
        with pytest.raises(ValueError):
            AugmentationConfig(kinds=())
