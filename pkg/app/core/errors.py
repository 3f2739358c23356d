# app/core/errors.py

class CavgError(Exception):
    """Base error. `exit_code` is the CLI contract: 1 validation, 2 I/O, 3 numeric."""
    exit_code = 1


class InputValidationError(CavgError):
    exit_code = 1


class ConfigurationError(InputValidationError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SchemaError(InputValidationError):
    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class DimensionError(InputValidationError):
    pass


class GenerationError(InputValidationError):
    pass


class UsageError(CavgError):
    exit_code = 1


class NumericalError(CavgError):
    exit_code = 3


def format_location(loc) -> str:
    """Join a pydantic error location tuple into a dotted path."""
    return ".".join(str(part) for part in loc)
