"""
Exceptions raised by the library, grouped by the CLI exit code they map to.
"""


class TrapsNetError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class UsageError(TrapsNetError):
    """Invalid arguments or incompatible inputs."""

    exit_code = 1


class InputError(TrapsNetError):
    """Unreadable, malformed or unsupported input files."""

    exit_code = 2


class RuntimeFailure(TrapsNetError):
    """Failures while training or evaluating."""

    exit_code = 3


class ShapeMismatch(UsageError, ValueError):
    pass


class IllegalAction(UsageError, ValueError):
    pass


class InvalidTopology(UsageError):
    pass


class DomainMismatch(UsageError):
    pass


class FeatureCountMismatch(UsageError):
    pass


class DegenerateRange(UsageError):
    pass


class SemanticError(InputError):
    pass


class VersionMismatch(InputError):
    pass


class CorruptChecksum(InputError):
    pass


class ManifestError(InputError):
    pass


class ParseError(InputError):
    """Syntax error with its position and the tokens that would be accepted."""

    def __init__(self, line, column, message, expected=()):
        self.line = line
        self.column = column
        self.message = message
        self.expected = frozenset(expected)
        text = f"line {line}, column {column}: {message}"
        if self.expected:
            text += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(text)


class NonFiniteGradient(RuntimeFailure):
    pass
