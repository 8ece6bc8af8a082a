"""Exception hierarchy shared by all fgnn modules.

Each class carries the CLI exit code it maps to, so the command-line
front end can translate failures without a lookup table.
"""


class FGNNError(Exception):
    exit_code = 1


class UsageError(FGNNError, ValueError):
    """Bad parameters, unknown format tags, invalid config keys."""

    exit_code = 2


class ContractError(FGNNError, ValueError):
    """A documented precondition of an operation was violated."""

    exit_code = 2


class DimensionError(ContractError):
    pass


class SegmentationError(ContractError):
    pass


class DataError(FGNNError):
    exit_code = 3


class EmptyInputError(DataError, ValueError):
    pass


class EmptyDatasetError(DataError, ValueError):
    pass


class IntegrityError(DataError):
    """A checkpoint or artifact file failed validation."""


class NumericalCheckError(FGNNError):
    exit_code = 4


class NotFittedError(FGNNError, AttributeError):
    pass
