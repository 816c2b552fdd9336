"""
Error types raised across the engine.

Every error derives from AmpZooError so the command-line layer can map failures
to exit codes in one place. Errors that describe a bad argument value also
derive from ValueError.
"""


class AmpZooError(Exception):
    """Base class for engine errors."""


class ConfigError(AmpZooError):
    """Invalid or unreadable configuration."""


class ParseError(AmpZooError):
    """Malformed capture file, WAV file or manifest."""


class SchemaError(AmpZooError):
    """Structurally valid input whose fields or shapes are inconsistent."""


class NonFiniteValueError(AmpZooError, ValueError):
    """NaN or infinity found where finite values are required."""


class EmptyRegistryError(AmpZooError):
    """No usable capture files were found."""


class ConditioningError(AmpZooError):
    """Conditioning value missing for a conditioned model, or given to an unconditioned one."""


class FormatError(AmpZooError):
    """Unsupported audio encoding."""


class EmptyClipError(AmpZooError, ValueError):
    """An audio clip without samples."""


class CorpusError(AmpZooError):
    """The clean-audio corpus cannot satisfy a request."""


class SampleRateError(CorpusError):
    """Sample rate differs from the rate the captures expect."""


class BatchSpecError(AmpZooError):
    """Batch request that the registry or corpus cannot satisfy."""


class ShapeError(AmpZooError, ValueError):
    """Array shapes or lengths do not agree."""


class DegenerateTargetError(AmpZooError, ValueError):
    """Target signal with zero energy."""


class DomainError(AmpZooError, ValueError):
    """Argument outside the function's domain."""


class PairingError(AmpZooError):
    """Contrastive views without a valid one-to-one partner mapping."""


class EmptyError(AmpZooError):
    """An operation that needs at least one item received none."""


class DegenerateLabelsError(AmpZooError):
    """Classifier training data with fewer than two classes."""


class DeviceIndexError(AmpZooError, IndexError):
    """Device index outside the registry or embedding table."""


class CacheError(AmpZooError):
    """Backward pass given a missing or stale forward cache."""


class DivergenceError(AmpZooError):
    """Training loss became non-finite."""


class NonFiniteGradientError(AmpZooError):
    """Optimizer step refused because a gradient is not finite."""


class CheckpointError(AmpZooError):
    """Unreadable or incompatible checkpoint container."""


class UsageError(AmpZooError):
    """Command-line arguments that contradict each other or the inputs."""
