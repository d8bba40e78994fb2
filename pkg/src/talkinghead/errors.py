"""Exception types shared across the pipeline.

Everything raised on purpose derives from PipelineError so the CLI can map
failures to exit code 2 with a stage-named message.  Anything else escaping
is a bug.
"""


class PipelineError(Exception):
    """Base class for expected, user-facing failures."""


class ShapeError(PipelineError):
    """Array shape or dimension mismatch between operands."""


class DegenerateMaskError(PipelineError):
    """An attention mask forbids every key for some query row."""


class AudioFormatError(PipelineError):
    """Unsupported or malformed audio input."""


class EmptyAudioError(AudioFormatError):
    """Zero-length waveform where at least one sample is required."""


class PoseError(PipelineError):
    """Invalid pose parameters (non-finite, or rotation angle out of range)."""


class FileFormatError(PipelineError):
    """Sequence/checkpoint file failed structural validation."""


class BehindCameraError(PipelineError):
    """A vertex landed closer than the near plane during projection."""


class TopologyError(PipelineError):
    """Face topology does not partition the point set as declared."""


class ConfigError(PipelineError):
    """Unknown or invalid configuration key/value."""


class CheckpointError(PipelineError):
    """Checkpoint directory missing or unreadable."""


class CheckpointCorruptionError(CheckpointError):
    """Manifest and blob disagree (bad offset, size, or dtype)."""


class MissingGradError(PipelineError):
    """Optimizer was handed a parameter with no matching gradient."""


class DatasetError(PipelineError):
    """Empty or structurally inconsistent training dataset."""


class DivergenceError(PipelineError):
    """Training loss became non-finite."""
