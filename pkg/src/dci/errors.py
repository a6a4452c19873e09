"""Exception types shared across the engine."""

from __future__ import annotations


class DCIError(Exception):
    """Base class for every error raised by the engine."""


class ParseError(DCIError, ValueError):
    """A move document could not be turned into a Move.

    ``field`` names the first offending field so a re-prompt can point at it.
    """

    code = "ParseError"

    def __init__(self, field: str, message: str = "") -> None:
        self.field = field
        self.message = message or f"{self.code}: {field}"
        super().__init__(self.message)


class MissingField(ParseError):
    code = "MissingField"


class UnknownAct(ParseError):
    code = "UnknownAct"


class UnknownMode(ParseError):
    code = "UnknownMode"


class OutOfRangeConfidence(ParseError):
    code = "OutOfRangeConfidence"


class InvalidField(ParseError):
    code = "InvalidField"


class InvalidEnvelope(DCIError, ValueError):
    def __init__(self, invariant: str) -> None:
        self.invariant = invariant
        super().__init__(f"invalid session envelope: {invariant}")


class MissingExitArtifact(DCIError):
    def __init__(self, phase: str, artifact: str) -> None:
        self.phase = phase
        self.artifact = artifact
        super().__init__(f"phase {phase} cannot exit: missing {artifact}")


class PhaseMismatch(DCIError):
    pass


class EmptyPool(DCIError, ValueError):
    pass


class IncompleteTable(DCIError, ValueError):
    pass


class IncompleteScoreSheet(DCIError, ValueError):
    pass


class ProviderFailure(DCIError):
    """A remote delegate could not produce a usable response."""


class ScenarioExhausted(DCIError):
    """A scripted delegate has nothing further to say for the requested call."""


class ScenarioParseError(DCIError, ValueError):
    pass


class ExpectationMismatch(DCIError):
    def __init__(self, field: str, expected, actual) -> None:
        self.field = field
        self.expected = expected
        self.actual = actual
        super().__init__(f"expectation {field!r} failed: expected {expected!r}, got {actual!r}")


class LogCorruption(DCIError):
    pass
