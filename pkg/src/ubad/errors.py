"""Exception types shared across the package."""


class UbadError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(UbadError, ValueError):
    """An argument violates a documented precondition."""


class UnknownCategoryError(InvalidInputError):
    """A raw value is absent from a categorical dimension's ordering."""

    def __init__(self, dimension: str, value: str):
        self.dimension = dimension
        self.value = value
        super().__init__(f"unknown category {value!r} for dimension {dimension!r}")


class MissingFieldError(InvalidInputError):
    """A record lacks a field the schema requires."""

    def __init__(self, field: str):
        self.field = field
        super().__init__(f"record is missing required field {field!r}")


class MalformedLineError(UbadError):
    """A log line does not have the expected column count."""

    def __init__(self, expected: int, got: int, line_number: int | None = None):
        self.expected = expected
        self.got = got
        self.line_number = line_number
        where = f" at line {line_number}" if line_number is not None else ""
        super().__init__(f"expected {expected} columns, got {got}{where}")


class BadTimestampError(UbadError):
    """A timestamp matches neither accepted format."""

    def __init__(self, text: str, line_number: int | None = None):
        self.text = text
        self.line_number = line_number
        where = f" at line {line_number}" if line_number is not None else ""
        super().__init__(f"unparseable timestamp {text!r}{where}")


class InvalidRangeError(InvalidInputError):
    """A (lo, hi) range has lo > hi."""


class InsufficientDataError(UbadError):
    """Too few usable records to fit a model or run a trial."""


class DataQualityError(UbadError):
    """Strict-mode ingestion rejected the input as mostly malformed."""
