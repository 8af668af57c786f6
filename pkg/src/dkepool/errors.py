"""Exception types shared across the library."""


class DkepoolError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DkepoolError):
    """Operand shapes do not fit the requested operation."""


class ContractError(DkepoolError):
    """A documented precondition was violated by the caller."""


class EmptyInputError(ContractError):
    """An operation received an empty tensor or empty graph."""


class NumericError(DkepoolError):
    """Non-finite values or numerically invalid arguments."""


class IterationLimitError(NumericError):
    """An iterative routine hit its sweep cap without converging."""


class DataError(DkepoolError):
    """Malformed dataset content (bad indices, inconsistent records)."""


class LoadError(DataError):
    """A mandatory dataset file is missing or unreadable."""


class ConfigError(DkepoolError):
    """Invalid run configuration."""
