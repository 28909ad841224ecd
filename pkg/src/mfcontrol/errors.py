"""Exception hierarchy shared by every mfcontrol module."""

from __future__ import annotations


class MFControlError(RuntimeError):
    """Domain-specific error for all simulation, learning and evaluation failures."""


class EmptyPointSetError(MFControlError):
    """A histogram was requested for zero points."""


class PointOutOfDomainError(MFControlError):
    """A point lies outside the bin grid (beyond the clamp slack)."""


class GridMismatchError(MFControlError):
    """A histogram does not live on the grid an environment expects."""


class SupportMismatchError(MFControlError):
    """Two finite mean fields are defined on different supports."""


class LengthMismatchError(MFControlError):
    """Parallel sequences have different lengths."""


class SizeMismatchError(MFControlError):
    """Two sample clouds have different sizes."""


class InvalidDiscreteActionError(MFControlError):
    """A discrete action index is outside the action set."""


class NonFiniteLogProbError(MFControlError):
    """A sampled action produced a NaN or infinite log-probability."""


class RowNotNormalizedError(MFControlError):
    """A decision rule or kernel row is not a probability vector."""


class MeshTooLargeError(MFControlError):
    """The value-iteration problem exceeds the configured size cap."""


class DimMismatchError(MFControlError):
    """A network input has the wrong width."""


class NonFiniteInputError(MFControlError):
    """A network input contains NaN or infinite entries."""


class TapeMismatchError(MFControlError):
    """A backward pass was given a gradient that does not fit its forward tape."""


class NonPositiveStdError(MFControlError):
    """A Gaussian head received a standard deviation that is not strictly positive."""


class ShapeMismatchError(MFControlError):
    """Optimizer inputs disagree in shape."""


class NonFiniteLossError(MFControlError):
    """A training loss evaluated to NaN or infinity."""


class CheckpointError(MFControlError):
    """A checkpoint file is missing, truncated or has an unknown format."""


class CheckpointEnvMismatchError(CheckpointError):
    """A checkpoint was trained on a different environment."""


class NonFiniteGapError(MFControlError):
    """A law-of-large-numbers gap evaluated to NaN or infinity."""


class ZeroGradientNormError(MFControlError):
    """A cosine similarity was requested for a zero gradient."""
