"""Exception types shared by the pipeline; the CLI maps each to an exit code."""


class MorphoPhyloError(Exception):
    exit_code = 3


class InputError(MorphoPhyloError, ValueError):
    """Unreadable, malformed or unsupported input data."""

    exit_code = 1


class ContractError(MorphoPhyloError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 3


class NumericError(MorphoPhyloError, ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""

    exit_code = 2
