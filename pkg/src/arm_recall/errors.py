"""Exception types shared across the package."""


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class ContractError(RuntimeError):
    """A caller broke a precondition of an operation (wrong rank, mismatched models...)."""


class LabelError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed on-disk data. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
