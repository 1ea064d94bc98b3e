"""
LODL Bench - Errors
Exception hierarchy shared by the library, the harness and the CLI.
"""

from typing import Optional


class LodlError(Exception):
    """Base class for every error raised by lodl_bench."""
    pass


class ShapeError(LodlError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shapes {rendered} do not conform")


class DomainError(LodlError):
    """Input outside the mathematical domain of an op (e.g. log of a non-positive value)."""
    pass


class TapeError(LodlError):
    """Misuse of a gradient tape."""
    pass


class NumericalError(LodlError):
    """A NaN or Inf appeared in an iterate, a loss or a forward value."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class OracleError(LodlError):
    """The exact solver of a domain rejected its input or failed to converge."""
    pass


class SamplingError(LodlError):
    """An oracle evaluation failed while building a sample table."""

    def __init__(self, message: str, sample_index: Optional[int] = None):
        self.sample_index = sample_index
        if sample_index is not None:
            message = f"sample {sample_index}: {message}"
        super().__init__(message)


class StoreError(LodlError):
    """An artifact file could not be read or written."""
    pass


class FormatVersionError(StoreError):
    """An artifact file carries an unsupported format version."""
    pass


class TruncatedFileError(StoreError):
    """An artifact file is shorter than its header declares."""
    pass


class MissingArtifactError(StoreError):
    """A stage needs an artifact that an earlier stage has not produced."""
    pass


class FitError(LodlError):
    """Fitting a learned loss failed."""
    pass


class TrainingError(LodlError):
    """Training a predictive model failed."""
    pass


class ConfigError(LodlError):
    """Configuration is invalid; names the offending key when there is one."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)


class StageError(LodlError):
    """A pipeline stage failed; carries the stage name and the instance id if known."""

    def __init__(self, stage: str, reason: str, instance_id: Optional[int] = None):
        self.stage = stage
        self.reason = reason
        self.instance_id = instance_id
        where = f" (instance {instance_id})" if instance_id is not None else ""
        super().__init__(f"{stage} failed{where}: {reason}")
