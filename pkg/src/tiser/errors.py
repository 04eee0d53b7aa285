"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TiserError(Exception):
    """Base class for every error raised by this package."""

    code = "TiserError"


class EmptyContext(TiserError):
    code = "EmptyContext"


class HasResidual(TiserError):
    code = "HasResidual"


class Unclassifiable(TiserError):
    code = "Unclassifiable"


class UnmatchedCandidate(TiserError):
    code = "UnmatchedCandidate"

    def __init__(self, candidates):
        self.candidates = list(candidates)
        super().__init__(f"candidates match no fact: {self.candidates}")


class NoMatchingFact(TiserError):
    code = "NoMatchingFact"


class NoAdjacentFact(TiserError):
    code = "NoAdjacentFact"


class MissingAnswerTag(TiserError):
    code = "MissingAnswerTag"


class UnparseableTimeline(TiserError):
    code = "UnparseableTimeline"

    def __init__(self, message: str, residual=()):
        self.residual = list(residual)
        super().__init__(message)


class BackendError(TiserError):
    code = "BackendError"


class NetworkError(BackendError):
    """Transient transport failure; callers may retry."""

    code = "NetworkError"


class FixtureMiss(BackendError):
    code = "FixtureMiss"


class ScriptExhausted(BackendError):
    code = "ScriptExhausted"


class GenerationFailed(TiserError):
    code = "GenerationFailed"


class SchemaError(TiserError):
    code = "SchemaError"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
