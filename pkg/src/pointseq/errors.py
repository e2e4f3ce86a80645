"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(ValueError):
    """Dataset content violates the file format or declared metadata."""


class ParseError(DataError):
    """Malformed file content, annotated with the offending location."""

    def __init__(self, message, path=None, line=None):
        detail = message
        if line is not None:
            detail = f"{detail} (line {line})"
        if path is not None:
            detail = f"{path}: {detail}"
        super().__init__(detail)
        self.path = path
        self.line = line
