from typing import Optional


class LogLinError(Exception):
    """Base class for every error raised by the package."""


class DomainError(LogLinError, ValueError):
    """Argument outside the domain of an operation."""


class ScaleError(DomainError):
    """Problem larger than the desk-scale guards allow."""


class InfeasibleFloorError(DomainError):
    """Probability floor that no distribution on the state space can satisfy."""


class InfiniteRiskError(DomainError):
    """Model assigns zero probability to a state carrying mass."""


class ZeroMarginalError(DomainError):
    """Closed-form fit requested while some category was never observed."""


class NormalizationError(LogLinError):
    pass


class AlphabetMismatchError(LogLinError):
    pass


class BarrierDomainError(LogLinError):
    """Iterate left the interior of the floor constraints (line-search signal)."""


class ParseError(LogLinError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UsageError(LogLinError):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ParseError, UsageError)):
        return 3
    if isinstance(exc, LogLinError):
        return 2
    return 1


def http_status_for(exc: BaseException) -> int:
    if isinstance(exc, ParseError):
        return 400
    if isinstance(exc, LogLinError):
        return 422
    return 500


def unwrap_validation_error(exc: ValueError, fallback: type = DomainError) -> LogLinError:
    """The package error behind a pydantic ValidationError, or `fallback` carrying its text."""
    for detail in getattr(exc, "errors", lambda: [])():
        original = (detail.get("ctx") or {}).get("error")
        if isinstance(original, LogLinError):
            return original
    return fallback(str(exc))
