"""
Checkpoint container.

One torch-serialised dict per target machine type:

    format_version   int
    model            MultitaskModel sections (encoder, arcface_head, type_head, aug_head, ...)
    optimizer        optimizer state_dict
    train_config     TrainConfig as a dict
    rng              {"numpy": bit generator state, "torch": torch rng state}
    composer         batch composer state
    stage, epoch     last completed epoch and its stage
    complete         True once stage 2 has finished
    scorer           written by fit-stats

Writes go to a temporary file that is renamed over the target.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Union

import torch

from utils.errors import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def typed_checkpoint_path(path: Union[str, Path], machine_type: str) -> Path:
    """models/run.pt + "fan" -> models/run_fan.pt"""
    path = Path(path)
    return path.with_name(f"{path.stem}_{machine_type}{path.suffix}")


def save_checkpoint(payload: Dict[str, Any], path: Union[str, Path]) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    torch.save({**payload, "format_version": CHECKPOINT_FORMAT_VERSION}, tmp)
    os.replace(tmp, out)
    logger.debug(f"Checkpoint written to {out}")
    return out


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Raises:
        CheckpointError: missing or unreadable file, or unsupported version
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format in {path}")
    return payload


def update_checkpoint(path: Union[str, Path], **sections: Any) -> Path:
    """Replace or add top-level sections of an existing checkpoint."""
    payload = load_checkpoint(path)
    payload.update(sections)
    return save_checkpoint(payload, path)
