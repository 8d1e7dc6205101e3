"""Exception hierarchy shared across the toolkit.

Each class carries the CLI exit code it maps to, so command handlers can
translate failures without a lookup table.
"""


class AtfmError(Exception):
    exit_code = 1


class ShapeError(AtfmError, ValueError):
    exit_code = 4


class StateError(AtfmError, RuntimeError):
    exit_code = 4


class ContractError(AtfmError, ValueError):
    """An input violates a documented precondition (e.g. unscaled flow maps)."""

    exit_code = 4


class DegenerateScalerError(AtfmError, ValueError):
    exit_code = 3


class DataError(AtfmError, ValueError):
    exit_code = 3


class SampleError(DataError):
    pass


class ConfigError(AtfmError, ValueError):
    exit_code = 2


class MetadataMismatchError(AtfmError, ValueError):
    exit_code = 4


class NumericError(AtfmError, ArithmeticError):
    exit_code = 5
