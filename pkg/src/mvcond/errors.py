"""Exception hierarchy.

Every error raised on bad input derives from :class:`DomainError` so the CLI
can separate domain failures (exit 1) from usage errors (exit 2). Names follow
the failure they describe rather than carrying an ``Error`` suffix.
"""

from __future__ import annotations


class DomainError(Exception):
    """Base class for all recoverable failures on bad input or geometry."""

    stage: str | None = None

    def __init__(self, message: str = "", *, stage: str | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "error": type(self).__name__,
            "message": str(self),
        }


# camera geometry
class NonPositiveDepth(DomainError):
    pass


class BehindCamera(DomainError):
    pass


class ShapeMismatch(DomainError):
    pass


class InvalidCamera(DomainError):
    pass


class InvalidRotation(InvalidCamera):
    pass


# robust fitting
class DegenerateSample(DomainError):
    pass


class TooFewPoints(DomainError):
    pass


class TooFewCorrespondences(DomainError):
    pass


class DegenerateConfiguration(DomainError):
    pass


class ZeroGradient(DomainError):
    pass


# curation
class EmptyClip(DomainError):
    pass


class MissingMasks(DomainError):
    pass


class NoUsableTracks(DomainError):
    pass


# visual condition
class TimestepOutOfRange(DomainError):
    pass


class MaskFractionUnreachable(DomainError):
    pass


class BadChannelCount(DomainError):
    pass


# depth alignment
class EmptyGuidance(DomainError):
    pass


class SingularSystem(DomainError):
    def __init__(self, message: str = "", *, pixel: tuple[int, int] | None = None, stage=None):
        super().__init__(message, stage=stage)
        self.pixel = pixel


class NoValidPixels(DomainError):
    pass


# pipeline
class EmptyState(DomainError):
    pass


class StageError(DomainError):
    """Wraps a failure inside one pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}", stage=stage)
        self.cause = cause

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["cause"] = type(self.cause).__name__
        return d


class ConfigError(DomainError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}", stage="config")
        self.field = field


# file formats
class FormatError(DomainError):
    stage = "ingest"


class BadMagic(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class DimensionOverflow(FormatError):
    pass


class SchemaError(FormatError):
    def __init__(self, pointer: str, message: str = ""):
        super().__init__(f"{pointer}: {message}" if message else pointer)
        self.pointer = pointer


class HeaderMismatch(FormatError):
    pass


class RowParseError(FormatError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
