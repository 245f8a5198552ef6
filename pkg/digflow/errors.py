"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "DigFlowException",
    "MeasureError",
    "DimensionMismatch",
    "EmptyMeasure",
    "OracleTooLarge",
    "ZeroMeanMeasure",
    "SinkhornDidNotConverge",
    "GateDomainError",
    "FlowError",
    "FlowTimeOutOfRange",
    "TrainingError",
    "TrainingDiverged",
    "UntrainedState",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointVersionMismatch",
    "CheckpointChecksumMismatch",
    "RefinementError",
    "ContractionWindowError",
    "DegenerateTrajectory",
    "VerificationError",
    "DegenerateInstance",
    "ConfigError",
    "UnknownConfigKey",
    "ConfigTypeMismatch",
    "MissingConfigField",
    "ValidatorException",
    "ValidatorTransformError",
    "ValidatorFailed",
)

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Any, Mapping, Optional


class DigFlowException(Exception):
    """
    Root exception for digflow. Can be used to catch any library errors.

    Attributes
    ----------
    message: :class:`str`
        Explanation of what went wrong.

    original: Optional[:class:`Exception`]
        The original exception that caused this one. May be ``None``.
    """

    def __init__(self, message: str, *, original: Optional[Exception] = None):
        self.message = message
        self.original = original

        super().__init__(message)


# Measure errors


class MeasureError(DigFlowException):
    """
    Base exception for anything raised while building measures or computing discrepancies.
    """


class DimensionMismatch(MeasureError):
    """
    Indicates two operands do not share the required shape.
    """


class EmptyMeasure(MeasureError):
    """
    Indicates an empirical measure was built from zero points.
    """


class OracleTooLarge(MeasureError):
    """
    Indicates the brute-force transport oracle was asked to enumerate too many permutations.
    """


class ZeroMeanMeasure(MeasureError):
    """
    Indicates the cosine discrepancy received a measure whose mean vector is zero.
    """


class SinkhornDidNotConverge(MeasureError):
    """
    Indicates the Sinkhorn scaling iterations hit their iteration cap.

    Attributes
    ----------
    violation: :class:`float`
        The marginal violation after the last iteration.

    iterations: :class:`int`
        Number of iterations run.
    """

    def __init__(self, message: str, *, violation: float, iterations: int):
        self.violation = violation
        self.iterations = iterations

        super().__init__(message)


# Gate errors


class GateDomainError(DigFlowException):
    """
    Indicates a gate was requested for a negative or non-finite discrepancy, or its configuration is invalid.
    """


# Flow errors


class FlowError(DigFlowException):
    """
    Base exception for flow-matching errors.
    """


class FlowTimeOutOfRange(FlowError):
    """
    Indicates an interpolation time outside ``[0, 1]``.
    """


# Training errors


class TrainingError(DigFlowException):
    """
    Base exception for trainer errors.
    """


class TrainingDiverged(TrainingError):
    """
    Indicates a training step produced a non-finite loss.

    Attributes
    ----------
    record: Mapping[:class:`str`, Any]
        Diagnostic values captured at the failing step.
    """

    def __init__(self, message: str, *, record: Mapping[str, Any]):
        self.record = dict(record)

        super().__init__(message)


class UntrainedState(TrainingError):
    """
    Indicates a model state is untrained or holds non-finite parameters.
    """


# Checkpoint errors


class CheckpointError(DigFlowException):
    """
    Base exception for checkpoint reading and writing.
    """


class CheckpointFormatError(CheckpointError):
    """
    Indicates a checkpoint file could not be read, written or parsed.
    """


class CheckpointVersionMismatch(CheckpointError):
    """
    Indicates a checkpoint was written by an incompatible format version.
    """


class CheckpointChecksumMismatch(CheckpointError):
    """
    Indicates the stored checksum does not match the file contents. Truncated files end up here.
    """


# Refinement errors


class RefinementError(DigFlowException):
    """
    Base exception for inference refinement and contraction iterations.
    """


class ContractionWindowError(RefinementError):
    """
    Indicates a step size outside the contraction window ``0 < alpha < 2 mu / L_E^2``.
    """


class DegenerateTrajectory(RefinementError):
    """
    Indicates a ratio sequence is too short or already converged, so no rate can be estimated.
    """


# Verification errors


class VerificationError(DigFlowException):
    """
    Base exception for the certification checks.
    """


class DegenerateInstance(VerificationError):
    """
    Indicates a randomized instance cannot support the check (e.g. non-positive descent constant).
    """


# Configuration errors


class ConfigError(DigFlowException):
    """
    Base exception for run configuration errors.

    Attributes
    ----------
    key: Optional[:class:`str`]
        The dotted configuration key at fault, when known.
    """

    def __init__(self, message: str, *, key: Optional[str] = None, original: Optional[Exception] = None):
        self.key = key

        super().__init__(message, original=original)


class UnknownConfigKey(ConfigError):
    """
    Indicates a configuration key that no schema entry accepts.
    """


class ConfigTypeMismatch(ConfigError):
    """
    Indicates a configuration value could not be converted to the expected type.
    """


class MissingConfigField(ConfigError):
    """
    Indicates a required configuration value is absent.
    """


class ValidatorException(ConfigError):
    """
    Base exception for schema validation errors.
    """


class ValidatorTransformError(ValidatorException):
    """
    Indicates a value could not be transformed while validating.
    """


class ValidatorFailed(ValidatorException):
    """
    Indicates a data validation did not succeed.
    """
