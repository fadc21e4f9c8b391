"""
Exception hierarchy for the anomalous sound detection pipeline.

Every failure the library raises on purpose derives from AsdError, so the CLI
can turn it into a one-line message and exit code 1 while unexpected bugs
still surface with a traceback.
"""

from typing import Dict, Optional


class AsdError(Exception):
    """Base class for all expected pipeline failures."""


class ConfigurationError(AsdError, ValueError):
    """A configuration value is missing, out of range or inconsistent."""


class ManifestError(AsdError, ValueError):
    """A dataset manifest cannot be built, parsed or violates its invariants."""


class AudioFormatError(AsdError, ValueError):
    """A WAV file has an unsupported sample rate, channel layout or content."""


class FeatureExtractionError(AsdError, ValueError):
    """Log-Mel extraction was asked to process an unusable clip."""


class AugmentationError(AsdError, ValueError):
    """An augmentation spec carries an unknown kind or out-of-range parameters."""


class SynthesisError(AsdError, ValueError):
    """The synthetic corpus description is invalid (e.g. overlapping fundamentals)."""


class ShapeMismatchError(AsdError, ValueError):
    """A tensor does not have the shape the model was configured for."""


class NonFiniteActivationError(AsdError, RuntimeError):
    """
    A forward pass produced NaN or Inf.

    Args:
        message: Error description
        block_index: Index of the conformer block whose output was non-finite
                     (-1 for the stem, n_blocks for the pooling layer)
    """

    def __init__(self, message: str, block_index: int):
        super().__init__(message)
        self.block_index = block_index


class LossInputError(AsdError, ValueError):
    """A loss received probabilities or labels outside their domain."""


class BatchCompositionError(AsdError, ValueError):
    """A balanced batch cannot be built from the available pools."""


class TrainingDivergedError(AsdError, RuntimeError):
    """
    Training produced a non-finite loss and was aborted.

    Args:
        message: Error description
        epoch: Epoch (1-based) in which the loss diverged
        batch: Batch index within the epoch
        components: Component losses at the time of failure
    """

    def __init__(
        self,
        message: str,
        epoch: int,
        batch: int,
        components: Optional[Dict[str, float]] = None,
    ):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.components = components or {}


class CheckpointError(AsdError, RuntimeError):
    """A checkpoint is missing, has the wrong version or mismatched shapes."""


class MissingStatisticsError(AsdError, KeyError):
    """Scoring was requested for a machine (type, id) that has no fitted statistics."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message for the CLI
        return str(self.args[0]) if self.args else ""


class EvaluationError(AsdError, ValueError):
    """AUC or report computation received unusable input."""


class InsufficientDataError(AsdError, ValueError):
    """A statistics group has too few samples to be fitted."""
