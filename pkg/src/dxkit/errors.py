"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DxkitError(Exception):
    """Base class for all package-specific errors."""


# --- transcript grammar ---

class ProtocolError(DxkitError):
    """Base class for transcript parse/emit failures."""


class MalformedMarker(ProtocolError):
    """A header-like line does not match any known section marker."""

    def __init__(self, line: str, lineno: int | None = None):
        self.line = line
        self.lineno = lineno
        at = f" (line {lineno})" if lineno is not None else ""
        super().__init__(f"unknown or malformed marker{at}: {line!r}")


class NonContiguousIndex(ProtocolError):
    """Step indices are not the contiguous sequence 1..N."""

    def __init__(self, expected: int, found: int):
        self.expected = expected
        self.found = found
        super().__init__(f"expected step index {expected}, found {found}")


class DuplicateAnswerLine(ProtocolError):
    """The final block contains the answer sentence more than once."""


class MissingAnswerLine(ProtocolError):
    """The final block lacks the mandatory answer sentence."""


class MissingFinal(ProtocolError):
    """Operation requires a final diagnosis but the transcript has none."""


class InvariantViolation(ProtocolError):
    """A transcript value violates a structural invariant."""


# --- engine / clients ---

class ClientUnavailable(DxkitError):
    """A remote model endpoint could not be reached or answered garbage."""


class JudgeUnavailable(ClientUnavailable):
    """The judge-model client failed."""


class AssistantUnavailable(ClientUnavailable):
    """The physician-assistant port failed."""


class DirectorProtocolError(DxkitError):
    """Director output could not be parsed as a step or final block."""


# --- casebank ---

class SchemaError(DxkitError):
    """A record does not match the expected schema."""

    def __init__(self, lineno: int, reason: str):
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"line {lineno}: {reason}")


class DuplicateCaseId(DxkitError):
    """Two case records share the same case_id."""


class ExtractionEmpty(DxkitError):
    """The clinical-information extraction step produced no content."""


class LeakageDetected(DxkitError):
    """Deep-think text quotes an answer from a later step."""

    def __init__(self, step: int, span: str):
        self.step = step
        self.span = span
        super().__init__(f"deep think at step {step} leaks a later answer: {span!r}")


# --- masks / preference ---

class EmptyMask(DxkitError):
    """A loss mask selects zero token positions."""


class EmptyPairList(DxkitError):
    """The preference loss needs at least one pair."""


# --- retrieval ---

class DimensionMismatch(DxkitError):
    """Vector dimension differs from the index dimension."""


class EmptyIndex(DxkitError):
    """Search requested against an index with no entries."""


# --- metrics / stats ---

class ScoreOutOfRange(DxkitError):
    """A judge returned a score outside [0, 10]."""


class NoPhysicianStep(DxkitError):
    """Perturbation target needs a physician step and none exists."""


class EmptyInput(DxkitError):
    """A statistic was requested over an empty sample."""
