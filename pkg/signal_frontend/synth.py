"""
Synthetic machine-sound corpus.

Each machine ID is a harmonic tone with its own fundamental and harmonic
profile, slowly amplitude modulated and mixed with white noise at a fixed SNR.
Anomalous clips keep the loudness of normal clips but change the spectrum:

    detune            fundamental shifted by 8-15 %
    transient         short broadband bursts
    harmonic_dropout  the fundamental and one overtone disappear

The corpus is written in the MIMII directory layout plus a manifest.csv with
explicit train/test splits.
"""

import logging
import zlib
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from signal_frontend.audio import AudioClip, MachineCondition, save_clip
from signal_frontend.features import FrontendConfig
from signal_frontend.manifest import (
    MANIFEST_FILENAME,
    DatasetManifest,
    ManifestEntry,
    Split,
    write_manifest,
)
from utils.errors import SynthesisError

logger = logging.getLogger(__name__)

ANOMALY_MODES = ("detune", "transient", "harmonic_dropout")

TONAL_RMS = 0.1
PEAK_LIMIT = 0.99


class SynthesisConfig(BaseModel):
    """Description of a synthetic corpus."""

    model_config = ConfigDict(frozen=True)

    fundamentals: Dict[str, List[float]] = Field(
        default_factory=lambda: {"fan": [150.0, 300.0], "pump": [700.0, 1100.0]}
    )
    n_normal: int = Field(default=20, ge=2)
    n_test_normal: int = Field(default=5, ge=0)
    n_anomalous: int = Field(default=10, ge=0)
    n_harmonics: int = Field(default=6, ge=2, le=20)
    duration: float = Field(default=10.0, gt=0.0)
    sample_rate: int = Field(default=16000, gt=0)
    snr_db: float = 6.0
    detune_min: float = Field(default=0.08, ge=0.08)
    detune_max: float = Field(default=0.15, gt=0.0)
    anomaly_modes: Tuple[str, ...] = ANOMALY_MODES
    min_mel_bin_gap: float = Field(default=3.0, ge=0.0)

    @field_validator("fundamentals")
    @classmethod
    def validate_shape(cls, v: Dict[str, List[float]]) -> Dict[str, List[float]]:
        if len(v) < 2:
            raise ValueError("At least two machine types are required")
        for machine_type, freqs in v.items():
            if len(freqs) < 2:
                raise ValueError(f"Machine type '{machine_type}' needs at least two IDs")
            if any(f <= 0 for f in freqs):
                raise ValueError(f"Machine type '{machine_type}' has a non-positive fundamental")
        return v

    @field_validator("anomaly_modes")
    @classmethod
    def validate_modes(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = set(v) - set(ANOMALY_MODES)
        if unknown or not v:
            raise ValueError(f"Anomaly modes must be a non-empty subset of {ANOMALY_MODES}, got {v}")
        return tuple(v)


def _htk_mel(freq: float) -> float:
    return 2595.0 * np.log10(1.0 + freq / 700.0)


def mel_bin_position(freq: float, frontend: FrontendConfig) -> float:
    """Fractional Mel filter index whose peak sits at freq."""
    lo, hi = _htk_mel(frontend.fmin), _htk_mel(frontend.fmax)
    return (_htk_mel(freq) - lo) / (hi - lo) * (frontend.n_mels + 1) - 1.0


def validate_fundamentals(cfg: SynthesisConfig, frontend: FrontendConfig) -> None:
    """
    Reject fundamentals of one machine type that land too close on the Mel axis.

    Raises:
        SynthesisError: two IDs of one type closer than min_mel_bin_gap bins
                        (or detune_max below detune_min)
    """
    if cfg.detune_max < cfg.detune_min:
        raise SynthesisError(f"detune_max {cfg.detune_max} is below detune_min {cfg.detune_min}")
    for machine_type, freqs in cfg.fundamentals.items():
        positions = sorted((mel_bin_position(f, frontend), f) for f in freqs)
        for (p1, f1), (p2, f2) in zip(positions, positions[1:]):
            if p2 - p1 < cfg.min_mel_bin_gap:
                raise SynthesisError(
                    f"Fundamentals {f1} Hz and {f2} Hz of '{machine_type}' overlap: "
                    f"{p2 - p1:.2f} Mel bins apart, need {cfg.min_mel_bin_gap}"
                )


def _clip_rng(seed: int, machine_type: str, machine_id: int, condition: str, index: int) -> np.random.Generator:
    type_key = zlib.crc32(machine_type.encode("utf-8"))
    cond_key = zlib.crc32(condition.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, type_key, machine_id, cond_key, index]))


def _harmonic_profile(seed: int, machine_type: str, machine_id: int, n_harmonics: int) -> np.ndarray:
    rng = _clip_rng(seed, machine_type, machine_id, "profile", 0)
    return rng.uniform(0.5, 1.0, size=n_harmonics) / np.arange(1, n_harmonics + 1)


def synthesize_clip(
    cfg: SynthesisConfig,
    seed: int,
    machine_type: str,
    machine_id: int,
    condition: MachineCondition,
    index: int,
) -> AudioClip:
    """Render one clip; deterministic in all arguments."""
    rng = _clip_rng(seed, machine_type, machine_id, condition.value, index)
    n = int(round(cfg.sample_rate * cfg.duration))
    t = np.arange(n) / cfg.sample_rate

    f0 = cfg.fundamentals[machine_type][machine_id] * (1.0 + rng.uniform(-0.003, 0.003))
    amplitudes = _harmonic_profile(seed, machine_type, machine_id, cfg.n_harmonics).copy()
    mode = None
    if condition == MachineCondition.ANOMALOUS:
        mode = cfg.anomaly_modes[rng.integers(len(cfg.anomaly_modes))]
        if mode == "detune":
            f0 *= 1.0 + rng.choice([-1.0, 1.0]) * rng.uniform(cfg.detune_min, cfg.detune_max)
        elif mode == "harmonic_dropout":
            amplitudes[0] = 0.0
            amplitudes[rng.integers(1, cfg.n_harmonics)] = 0.0

    nyquist = cfg.sample_rate / 2
    phases = rng.uniform(0, 2 * np.pi, size=cfg.n_harmonics)
    tonal = np.zeros(n)
    for h in range(1, cfg.n_harmonics + 1):
        if h * f0 >= nyquist or amplitudes[h - 1] == 0.0:
            continue
        tonal += amplitudes[h - 1] * np.sin(2 * np.pi * h * f0 * t + phases[h - 1])

    modulation = 1.0 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    tonal *= modulation
    tonal *= TONAL_RMS / max(np.sqrt(np.mean(tonal ** 2)), 1e-12)

    if mode == "transient":
        for _ in range(rng.integers(3, 9)):
            length = int(cfg.sample_rate * rng.uniform(0.02, 0.05))
            start = rng.integers(0, n - length)
            envelope = np.exp(-np.linspace(0.0, 6.0, length))
            tonal[start:start + length] += 3 * TONAL_RMS * envelope * rng.standard_normal(length)

    noise_rms = TONAL_RMS / (10.0 ** (cfg.snr_db / 20.0))
    samples = tonal + noise_rms * rng.standard_normal(n)

    peak = np.max(np.abs(samples))
    if peak > PEAK_LIMIT:
        samples *= PEAK_LIMIT / peak

    return AudioClip(
        samples=samples,
        sample_rate=cfg.sample_rate,
        duration=cfg.duration,
        machine_type=machine_type,
        machine_id=machine_id,
        condition=condition,
    )


def synth_corpus(
    cfg: SynthesisConfig,
    seed: int,
    out_dir: Union[str, Path],
    frontend: FrontendConfig = FrontendConfig(),
) -> DatasetManifest:
    """
    Write a synthetic corpus under out_dir and return its manifest.

    Layout: <type>/id_XX/{normal,abnormal}/<NNNN>.wav plus manifest.csv. The
    last n_test_normal normals of every ID go to the test split together with
    all anomalous clips. Output is bit-identical for identical (cfg, seed).

    Raises:
        SynthesisError: overlapping fundamentals or too many test normals
    """
    validate_fundamentals(cfg, frontend)
    if cfg.n_test_normal >= cfg.n_normal - 1:
        raise SynthesisError(
            f"n_test_normal ({cfg.n_test_normal}) must leave at least two training normals "
            f"out of n_normal ({cfg.n_normal})"
        )

    root = Path(out_dir)
    entries: List[ManifestEntry] = []
    for machine_type in sorted(cfg.fundamentals):
        for machine_id in range(len(cfg.fundamentals[machine_type])):
            plan = [(MachineCondition.NORMAL, k) for k in range(cfg.n_normal)]
            plan += [(MachineCondition.ANOMALOUS, k) for k in range(cfg.n_anomalous)]
            for condition, k in plan:
                clip = synthesize_clip(cfg, seed, machine_type, machine_id, condition, k)
                folder = "normal" if condition == MachineCondition.NORMAL else "abnormal"
                rel = Path(machine_type) / f"id_{machine_id:02d}" / folder / f"{k:04d}.wav"
                save_clip(clip, root / rel)

                in_test = condition == MachineCondition.ANOMALOUS or k >= cfg.n_normal - cfg.n_test_normal
                entries.append(ManifestEntry(
                    path=rel.as_posix(),
                    machine_type=machine_type,
                    machine_id=machine_id,
                    condition=condition,
                    split=Split.TEST if in_test else Split.TRAIN,
                ))
            logger.info(f"Synthesized {len(plan)} clips for {machine_type}/id_{machine_id:02d}")

    manifest = DatasetManifest(entries=sorted(entries, key=lambda e: e.path), root=root)
    manifest.validate()
    write_manifest(manifest, root / MANIFEST_FILENAME)
    logger.info(f"Synthetic corpus with {len(entries)} clips written to {root}")
    return manifest
