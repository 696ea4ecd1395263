"""Exception hierarchy shared by all textled modules."""


class TextledError(Exception):
    """Base class for all errors raised by this package."""


# --- charset / labels ---

class UnknownSymbol(TextledError):
    pass


class LengthViolation(TextledError):
    pass


# --- file formats ---

class ParseError(TextledError):
    pass


class DuplicateId(TextledError):
    pass


class UnsupportedFormat(TextledError):
    pass


# --- similarity / features ---

class MissingSymbol(TextledError):
    pass


class DimensionMismatch(TextledError):
    pass


class InvalidTemperature(TextledError):
    pass


class DegenerateGlyph(TextledError):
    pass


# --- corruption ---

class InvalidPosition(TextledError):
    pass


class NoOpTransposition(TextledError):
    pass


class WouldEmpty(TextledError):
    pass


class SelfSubstitution(TextledError):
    pass


class NoFeasibleOp(TextledError):
    pass


# --- numerics / model ---

class ShapeMismatch(TextledError):
    pass


class NonScalarLoss(TextledError):
    pass


class DoubleBackward(TextledError):
    pass


class DataError(TextledError):
    pass


# --- evaluation ---

class IdMismatch(TextledError):
    pass


class LengthMismatch(TextledError):
    pass


class IdenticalLabels(TextledError):
    pass


class KTooLarge(TextledError):
    pass
