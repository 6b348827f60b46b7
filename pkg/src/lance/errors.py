"""Exception hierarchy shared by every lance module."""


class LanceError(Exception):
    """Base class for all errors raised by this package."""


class InvalidValue(LanceError):
    """A numeric argument is non-finite or outside its allowed range."""


class ShapeError(LanceError):
    """Matrix or vector dimensions do not line up."""


class DegenerateRow(LanceError):
    """A row that must be nonzero has zero norm."""


class DegenerateShift(LanceError):
    """A shift vector that must be nonzero has zero norm."""


class EmptySet(LanceError):
    """An operand set that must be nonempty is empty."""


class FormatError(LanceError):
    """An array file is corrupt: bad magic, truncated payload, unreadable header."""


class UnsupportedFormat(LanceError):
    """An array file is well formed but uses a dtype/version/layout we do not accept."""


class ManifestError(LanceError):
    """A dataset manifest violates its schema or internal invariants."""


class EmptyBank(LanceError):
    """A text bank file produced no entries."""


class TemplateError(LanceError):
    """A prompt template is missing a required placeholder."""


class DivergenceError(LanceError):
    """Training produced a non-finite loss."""


class SpecError(LanceError):
    """A synthetic-world specification violates its invariants."""
