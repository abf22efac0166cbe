"""Exception hierarchy.

Two families matter for the CLI exit-code contract: ``ConfigError`` maps to
exit code 2 (bad inputs, incompatible arguments, malformed files) and
``NumericalError`` maps to exit code 3 (data-dependent numerical failure).
"""


class KatError(Exception):
    """Base class for all package errors."""


class ConfigError(KatError):
    """Invalid input, configuration, or file format."""


class NumericalError(KatError):
    """Numerical failure while processing valid inputs."""


# dataset
class MissingColumn(ConfigError):
    pass


class NonNumericCell(ConfigError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"non-numeric cell at row {row}, column {column!r}: {value!r}")
        self.row = row
        self.column = column
        self.value = value


class EmptyFile(ConfigError):
    pass


class BoundaryOutOfRange(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class OriginViolation(ConfigError):
    pass


# neural
class EmptyInput(ConfigError):
    pass


class ParamsFormatError(ConfigError):
    pass


# classical
class EmptyDataset(ConfigError):
    pass


class IncompatibleMethod(ConfigError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class InfeasibleAtAllLeaves(NumericalError):
    pass


class TooManyPeriods(ConfigError):
    pass


# augmentation
class AllModelsFiltered(NumericalError):
    pass


class DatasetTooSmall(ConfigError):
    pass


# training
class EmptyPool(ConfigError):
    pass


# diagnostics
class LengthMismatch(ConfigError):
    pass


class MissingBaseline(ConfigError):
    pass


class AllTargetsBelowThreshold(NumericalError):
    pass


class OracleUnavailable(ConfigError):
    pass


class DegenerateCovariance(NumericalError):
    pass


# harness
class InvalidConsumerParams(ConfigError):
    pass
