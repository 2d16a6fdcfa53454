"""Exception hierarchy shared across the package."""


class ArrangeError(Exception):
    """Base class for all domain errors raised by arrangekit."""

    code = "ArrangeError"


class MissingFile(ArrangeError):
    code = "MissingFile"


class ParseError(ArrangeError):
    code = "ParseError"

    def __init__(self, message, *, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class DegenerateMesh(ArrangeError):
    code = "DegenerateMesh"


class UnknownObject(ArrangeError):
    code = "UnknownObject"


class BehindCamera(ArrangeError):
    code = "BehindCamera"


class NoHit(ArrangeError):
    code = "NoHit"


class DegenerateHull(ArrangeError):
    code = "DegenerateHull"


class DegenerateDirection(ArrangeError):
    code = "DegenerateDirection"


class SolveFailed(ArrangeError):
    code = "SolveFailed"


class EmptyTrajectory(ArrangeError):
    code = "EmptyTrajectory"


class StepFailed(ArrangeError):
    code = "StepFailed"


class SearchExhausted(ArrangeError):
    code = "SearchExhausted"


class ScriptExhausted(ArrangeError):
    code = "ScriptExhausted"


class AgentError(ArrangeError):
    """Any failure talking to an external agent; counts as a failed attempt."""

    code = "AgentError"


class AgentTimeout(AgentError):
    code = "Timeout"


class TransportError(AgentError):
    code = "TransportError"


class SchemaError(AgentError):
    code = "SchemaError"
