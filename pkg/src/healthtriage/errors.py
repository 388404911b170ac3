"""Exception types shared across the package."""


class HealthTriageError(Exception):
    """Base class for all package errors."""


# --- provider / gateway ---

class ConfigError(HealthTriageError):
    pass


class TransportError(HealthTriageError):
    pass


class EmptyText(HealthTriageError):
    pass


class EmptyGeneration(HealthTriageError):
    pass


# --- knowledge index ---

class BadPolicy(HealthTriageError):
    pass


class EmptyCorpus(HealthTriageError):
    pass


class DimMismatch(HealthTriageError):
    pass


class EmptyIndex(HealthTriageError):
    pass


class EmptyQuery(HealthTriageError):
    pass


# --- scoring / bank ---

class ParseError(HealthTriageError):
    pass


class DuplicateFeatureName(ParseError):
    pass


class BadFeatureName(ParseError):
    pass


class NoScoreFound(HealthTriageError):
    pass


# --- expression DSL ---

class ExprSyntaxError(HealthTriageError):
    """Raised on malformed expression source; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownFunction(ExprSyntaxError):
    pass


class UnresolvedIdent(HealthTriageError):
    pass


# --- boosting ---

class ShapeMismatch(HealthTriageError):
    pass


class UnknownFeatureSpace(HealthTriageError):
    pass


class VersionMismatch(HealthTriageError):
    pass


class DigestMismatch(HealthTriageError):
    pass


class IoError(HealthTriageError):
    pass


# --- pipeline ---

class EmptyDialogue(HealthTriageError):
    pass


class EmptyTestset(HealthTriageError):
    pass


class NoPrediction(HealthTriageError):
    pass


class BadSpec(HealthTriageError):
    pass


# --- consult sessions ---

class SessionClosed(HealthTriageError):
    pass


class EmptyMessage(HealthTriageError):
    pass


class NotPredicted(HealthTriageError):
    pass


class Busy(HealthTriageError):
    pass


class UnknownSession(HealthTriageError):
    pass
