"""Exception hierarchy shared by all subsystems."""


class ShardbError(Exception):
    """Base class for all errors raised by this package."""


class InvalidCapacityError(ShardbError):
    """Accumulator key capacity must be a positive integer."""


class CapacityExceededError(ShardbError):
    """A set is larger than the accumulator key supports."""


class InternalInvariantError(ShardbError):
    """A condition that honest code paths can never produce; signals a bug."""


class MalformedProofError(ShardbError):
    """A proof object is structurally unusable (wrong counts, bad lengths)."""


class EmptyTreeError(ShardbError):
    """Merkle trees require at least one leaf."""


class SqlError(ShardbError):
    """Problem with a SQL statement; carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class UnsupportedFeatureError(SqlError):
    """Statement uses a construct outside the supported SQL subset."""


class SchemaError(ShardbError):
    """Value/type/key mismatch against a table schema."""


class UnknownTableError(ShardbError):
    """Referenced table is not declared or not locatable."""


class ConfigError(ShardbError):
    """Simulation configuration is invalid (maps to CLI exit code 2)."""


class InvariantViolation(ShardbError):
    """A replay/verify check failed (maps to CLI exit code 1)."""
