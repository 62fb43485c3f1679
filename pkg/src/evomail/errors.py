"""Typed errors raised across the package.

Every failure mode surfaced by the public API is one of these classes;
callers never see bare ValueError/KeyError from the pipeline itself.
"""


class EvomailError(Exception):
    """Base class for all package errors."""


class MalformedMessage(EvomailError):
    """Raw bytes could not be interpreted as an email message."""

    def __init__(self, reason: str, byte_offset: int = 0):
        super().__init__(f"{reason} (at byte {byte_offset})")
        self.byte_offset = byte_offset


class UnsupportedEncoding(EvomailError):
    """A text part could not be decoded even after the latin-1 fallback."""

    def __init__(self, reason: str, byte_offset: int = 0):
        super().__init__(f"{reason} (at byte {byte_offset})")
        self.byte_offset = byte_offset


class EmptyCorpus(EvomailError):
    """An operation requiring a nonempty corpus was given an empty one."""


class CandidateExplosion(EvomailError):
    """all_pairs candidate generation requested above the configured cap."""


class DimensionMismatch(EvomailError):
    """Feature/parameter dimensions disagree."""


class NonFiniteGradient(EvomailError):
    """A NaN/Inf appeared in a gradient; carries the parameter path."""

    def __init__(self, param_path: str):
        super().__init__(f"non-finite gradient in {param_path}")
        self.param_path = param_path


class NonFiniteLoss(EvomailError):
    """A loss term evaluated to NaN/Inf."""


class DivergenceDetected(EvomailError):
    """Training loss became non-finite."""


class TraceUnavailable(EvomailError):
    """A forward trace does not cover the requested node/sample."""


class SeedMismatch(EvomailError):
    """Hybrid combination was given samples from different seeds."""


class RemoteUnavailable(EvomailError):
    """The remote embedding service could not be reached or answered badly."""


class VersionMismatch(EvomailError):
    """A persisted file carries an unsupported format version."""


class CorruptFile(EvomailError):
    """A persisted file is truncated or structurally invalid."""

    def __init__(self, reason: str, offset: int = 0):
        super().__init__(f"{reason} (at offset {offset})")
        self.offset = offset


class InsufficientCheckpoints(EvomailError):
    """STC needs at least two checkpoints."""


class EmptyInput(EvomailError):
    """Metrics were requested over an empty score/label list."""


class ConfigError(EvomailError):
    """Bad key or value in a configuration file."""


class NotFitted(EvomailError):
    """Estimator used before fit()."""
