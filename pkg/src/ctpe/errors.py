"""Exception hierarchy.

Errors fall into three families so the CLI can map them onto exit codes:
configuration problems, bad input data, and numerical/internal failures.
"""


class CTPEError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CTPEError):
    """Invalid hyperparameters, flags or missing required inputs."""


class DataError(CTPEError):
    """Input files or records that violate their format or invariants."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class DuplicateId(DataError):
    pass


class EmptySide(DataError):
    pass


class UnknownBoundary(DataError):
    pass


class DimMismatch(DataError):
    pass


class AllTokensOOV(DataError):
    pass


class UnknownId(DataError):
    pass


class CorpusTooSmall(DataError):
    pass


class MalformedRun(DataError):
    pass


class UnknownQuery(DataError):
    pass


class EmptyJudgments(DataError):
    pass


class FingerprintMismatch(DataError):
    pass


class ZeroVector(CTPEError, ValueError):
    pass


class SequenceTooShort(CTPEError, ValueError):
    pass


class TraceMismatch(CTPEError, ValueError):
    pass


class ShapeMismatch(CTPEError, ValueError):
    pass
