"""Shared exception types, mapped to CLI exit codes in :mod:`nmpg.cli`."""


class CapacityError(RuntimeError):
    """An exact computation would exceed its documented size bound.

    Enumeration and permutation sums grow binomially/factorially; callers
    must stay inside the caps instead of silently truncating.
    """


class NumericError(ArithmeticError):
    """A non-finite value appeared where the algorithm requires finiteness."""


class ConfigError(ValueError):
    """A run configuration file is malformed or fails validation."""
