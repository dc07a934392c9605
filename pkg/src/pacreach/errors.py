"""Exception hierarchy shared across pacreach modules."""


class PacReachError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(PacReachError, ValueError):
    pass


class Infeasible(PacReachError):
    """No sample plan satisfies the requested confidence constraints."""


class PlanViolation(PacReachError):
    """An explicit sample plan violates one of the sample-size inequalities."""


class OutOfBounds(PacReachError, ValueError):
    def __init__(self, dimension, value):
        super().__init__(f"coordinate {dimension} = {value!r} lies outside the measurement box")
        self.dimension = dimension
        self.value = value


class UnknownLabel(PacReachError, ValueError):
    def __init__(self, label):
        super().__init__(f"unknown label {label!r}")
        self.label = label


class MixedVariant(PacReachError, TypeError):
    pass


class SpaceMismatch(PacReachError, ValueError):
    pass


class InvalidSpec(PacReachError, ValueError):
    pass


class OracleUnavailable(PacReachError):
    pass


class ReadoutError(PacReachError):
    def __init__(self, message, turn=None):
        super().__init__(message if turn is None else f"turn {turn}: {message}")
        self.turn = turn


class BackendFailure(PacReachError):
    def __init__(self, message, turn=None, status=None, stderr_tail=""):
        parts = [message]
        if status is not None:
            parts.append(f"status={status}")
        if stderr_tail:
            parts.append(f"stderr: {stderr_tail}")
        super().__init__("; ".join(parts))
        self.turn = turn
        self.status = status
        self.stderr_tail = stderr_tail


class BackendTimeout(BackendFailure):
    pass


class TemplateError(PacReachError, ValueError):
    pass


class ConfigError(PacReachError, ValueError):
    """Invalid campaign configuration; the message starts with the field path."""


class InvalidRunDir(PacReachError):
    pass


class DegenerateInput(PacReachError, ValueError):
    pass
