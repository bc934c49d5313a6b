"""Exception hierarchy shared by every stage of the pipeline.

Each error carries the CLI exit code it maps to.
"""


class PCAError(Exception):
    exit_code = 1


class InvalidInputError(PCAError, ValueError):
    exit_code = 2


class ShapeError(InvalidInputError):
    pass


class ConfigurationError(PCAError):
    exit_code = 2


class ContractViolationError(PCAError):
    exit_code = 2


class MissingAssetError(PCAError, LookupError):
    exit_code = 3


class MissingKnowledgeError(MissingAssetError):
    pass


class NumericalError(PCAError, ArithmeticError):
    exit_code = 4


class DeterminismError(NumericalError):
    pass


class UndefinedMetricError(PCAError):
    exit_code = 4
