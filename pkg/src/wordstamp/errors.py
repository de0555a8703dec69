"""Exception classes shared across the package.

Each class carries a distinct CLI exit status (see ``cli.EXIT_CODES``).
"""


class WordstampError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(WordstampError, ValueError):
    """A time value falls outside the representable timestamp range."""


class VocabError(WordstampError, KeyError):
    """A word is not in the vocabulary."""

    def __str__(self):
        return Exception.__str__(self)


class OrderError(WordstampError, ValueError):
    """End times are not non-decreasing."""


class ShapeError(WordstampError, ValueError):
    pass


class NumericsError(WordstampError, ArithmeticError):
    """A loss or normalizer became non-finite or degenerate."""


class UsageError(WordstampError, RuntimeError):
    pass


class ContractError(WordstampError, ValueError):
    """An input violates an operation's precondition (e.g. a malformed sequence)."""


class DomainError(WordstampError, ValueError):
    pass


class VersionError(WordstampError):
    """A checkpoint was written by an incompatible format version."""
