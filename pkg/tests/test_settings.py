"""
Tests for Pydantic Settings configuration.
"""
import os
from pathlib import Path
from unittest.mock import patch

import pytest

TOY_ENV = Path(__file__).resolve().parents[1] / "config" / "toy.env"


class TestSettingsDefaults:
    """Test default values and the derived domain configs."""

    def test_default_values(self):
        """Defaults follow the full-scale setup."""
        from config.settings import Settings

        with patch.dict(os.environ, {}, clear=True):
            s = Settings()
            assert s.n_mels == 128
            assert s.n_blocks == 3
            assert s.stage1_epochs == 80
            assert s.stage2_epochs == 40
            assert s.batch_size == 28
            assert s.learning_rate == 1e-3
            assert s.arcface_scale == 16.0
            assert s.arcface_margin == 1.28
            assert s.manifest_layout == "mimii"
            assert s.audio_cache_size == 0

    def test_domain_configs_agree(self):
        from config.settings import Settings

        with patch.dict(os.environ, {}, clear=True):
            s = Settings()
            encoder = s.encoder()
            assert encoder.input_dim == s.frontend().n_mels
            assert s.heads().embedding_dim == encoder.pooled_dim == 64
            train = s.train("fan")
            assert train.target_machine_type == "fan"
            assert train.seed == s.seed
            assert s.scorer().eps_scale == 1e-3
            assert s.augmentation().kinds == tuple(s.aug_kinds)

    def test_log_level_value(self):
        import logging

        from config.settings import Settings

        with patch.dict(os.environ, {"ASD_LOG_LEVEL": "debug"}, clear=True):
            assert Settings().log_level_value == logging.DEBUG


class TestSettingsSources:
    """Test environment, config-file and keyword overrides."""

    def test_env_override(self):
        from config.settings import Settings

        with patch.dict(os.environ, {"ASD_BATCH_SIZE": "14", "ASD_N_BLOCKS": "2"}, clear=True):
            s = Settings()
            assert s.batch_size == 14
            assert s.n_blocks == 2

    def test_env_json_values(self):
        from config.settings import Settings

        env = {
            "ASD_SYNTH_FUNDAMENTALS": '{"valve": [200.0], "slider": [900.0]}',
            "ASD_AUG_KINDS": '["none", "white_noise"]',
        }
        with patch.dict(os.environ, env, clear=True):
            s = Settings()
            assert s.synthesis().fundamentals == {"valve": [200.0], "slider": [900.0]}
            assert [k.value for k in s.aug_kinds] == ["none", "white_noise"]

    def test_toy_config_file(self):
        from config.settings import load_settings

        with patch.dict(os.environ, {}, clear=True):
            s = load_settings(TOY_ENV)
            assert s.n_blocks == 1
            assert s.model_dim == 16
            assert s.stage1_epochs == 15
            assert s.synth_fundamentals == {"fan": [150.0, 300.0], "pump": [700.0, 1100.0]}
            assert s.audio_cache_size == 256

    def test_env_beats_file_and_kwargs_beat_env(self):
        from config.settings import load_settings

        with patch.dict(os.environ, {"ASD_STAGE1_EPOCHS": "3", "ASD_SEED": "5"}, clear=True):
            s = load_settings(TOY_ENV, seed=9)
            assert s.stage1_epochs == 3
            assert s.seed == 9

    def test_unprefixed_env_ignored(self):
        """Generic variables like SEED or HOP from the shell never reach the config."""
        from config.settings import load_settings

        with patch.dict(os.environ, {"SEED": "7", "HOP": "256", "ALPHA": "0.5"}, clear=True):
            s = load_settings(TOY_ENV)
            assert s.seed == 0
            assert s.hop == 512
            assert s.alpha == 1.0

    def test_empty_grad_norm_means_no_clipping(self):
        from config.settings import Settings

        with patch.dict(os.environ, {"ASD_MAX_GRAD_NORM": "none"}, clear=True):
            assert Settings().max_grad_norm is None
        with patch.dict(os.environ, {"ASD_MAX_GRAD_NORM": "5"}, clear=True):
            assert Settings().max_grad_norm == 5.0


class TestSettingsValidation:
    """Test invalid values surface as ConfigurationError."""

    def test_missing_file(self, tmp_path):
        from config.settings import load_settings
        from utils.errors import ConfigurationError

        with pytest.raises(ConfigurationError, match="not found"):
            load_settings(tmp_path / "absent.env")

    def test_odd_batch_size(self):
        from config.settings import load_settings
        from utils.errors import ConfigurationError

        with patch.dict(os.environ, {}, clear=True):
            with pytest.raises(ConfigurationError, match="even"):
                load_settings(batch_size=27)

    def test_heads_must_divide_model_dim(self):
        from config.settings import load_settings
        from utils.errors import ConfigurationError

        with patch.dict(os.environ, {"ASD_MODEL_DIM": "10", "ASD_ATTENTION_HEADS": "4"}, clear=True):
            with pytest.raises(ConfigurationError, match="divisible"):
                load_settings()

    def test_bad_value_in_file(self, tmp_path):
        from config.settings import load_settings
        from utils.errors import ConfigurationError

        config = tmp_path / "bad.env"
        config.write_text("ASD_LEARNING_RATE=-1\n")
        with patch.dict(os.environ, {}, clear=True):
            with pytest.raises(ConfigurationError, match="learning_rate"):
                load_settings(config)

    def test_fmax_above_fmin(self):
        from config.settings import load_settings
        from utils.errors import ConfigurationError

        with patch.dict(os.environ, {}, clear=True):
            with pytest.raises(ConfigurationError, match="fmax"):
                load_settings(fmin=4000.0, fmax=2000.0)
