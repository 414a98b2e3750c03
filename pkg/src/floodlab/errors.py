"""Exception types shared across floodlab."""


class FloodlabError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(FloodlabError, ValueError):
    pass


class InsufficientData(FloodlabError, ValueError):
    pass


class DegenerateData(FloodlabError, ValueError):
    """Raised when input has a single class or a single element where more are needed."""


class ConfigError(FloodlabError, ValueError):
    pass


class ShapeError(FloodlabError, ValueError):
    pass


class FormatError(FloodlabError, ValueError):
    """Malformed file: missing header, bad magic, unknown version."""


class RowError(FormatError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class OrderError(FloodlabError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
