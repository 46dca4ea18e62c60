"""Exception types shared across the attack framework."""


class SceneTapError(Exception):
    """Base class for all framework errors."""


class ManifestError(SceneTapError):
    """A dataset manifest line failed to parse or validate."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ParseError(SceneTapError):
    """A model response contained no parsable structured object."""


class ValidationError(SceneTapError):
    """A parsed model response violated the plan contract."""


class PlanningFailed(SceneTapError):
    """All retries of a planning stage were exhausted."""

    def __init__(self, stage, last_raw, message=None):
        super().__init__(message or f"planning stage '{stage}' failed after retries")
        self.stage = stage
        self.last_raw = last_raw


class JudgingFailed(SceneTapError):
    """The naturalness judge never produced a parsable verdict."""


class BackendUnavailable(SceneTapError):
    """Retries against a backend were exhausted on retryable failures."""


class BackendRejected(SceneTapError):
    """A backend answered with a non-retryable client error."""

    def __init__(self, status, body):
        shown = body if isinstance(body, str) else repr(body)
        super().__init__(f"backend rejected request (HTTP {status}): {shown[:500]}")
        self.status = status
        self.body = body


class ProtocolViolation(SceneTapError):
    """A backend response broke the wire contract (schema or dimensions)."""


class CapabilityUnsupported(SceneTapError):
    """The configured target cannot serve the requested capability."""


class NoWritableRegion(SceneTapError):
    """Segmentation produced no region that survives the size filter."""


class ConfigError(SceneTapError):
    """Run configuration is missing, malformed, or references absent paths."""
