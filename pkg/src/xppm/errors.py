"""Exception types shared across the pipeline."""


class XppmError(Exception):
    """Base class for all library errors."""


class ConfigError(XppmError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class RowError(XppmError):
    """A single malformed input row."""

    def __init__(self, line, message, case_id=None):
        self.line = line
        self.case_id = case_id
        self.message = message
        super().__init__(f"line {line}: {message}")


class LabelingError(XppmError):
    """A KPI cannot be computed for a trace."""


class EncodingError(XppmError):
    pass


class FingerprintMismatch(XppmError):
    """A model or dataset cache was built for a different feature schema."""


class ShapleyError(XppmError):
    pass


class SpecError(XppmError):
    """Invalid synthetic-log specification."""
