"""Exception hierarchy shared by the library and mapped to CLI exit codes."""


class SubDistillError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InputError(SubDistillError, ValueError):
    """Bad shapes, bad parameters, unreadable or malformed files."""

    exit_code = 2


class DimensionError(InputError):
    pass


class FormatError(InputError):
    pass


class DegenerateError(SubDistillError, ArithmeticError):
    """A quantity needed for the math is zero or undefined."""

    exit_code = 3


class RankError(DegenerateError):
    pass


class DivergenceError(SubDistillError, ArithmeticError):
    """Training produced a non-finite or exploding loss."""

    exit_code = 4

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class AggregationError(SubDistillError):
    """Run directories cannot be combined into one report."""

    exit_code = 5
