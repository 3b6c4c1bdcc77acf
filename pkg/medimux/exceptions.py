class MedimuxError(Exception):
    """Base class for every error raised by medimux."""


class ConfigError(MedimuxError):
    pass


class InvalidModelSpec(ConfigError, ValueError):
    """A simulation model whose parameters are out of range or inconsistent."""


class DataError(MedimuxError):
    pass


class InvalidDataset(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"Column {name!r} not found in input")


class NonBinaryTreatment(InvalidDataset):
    pass


class NonBinaryOutcome(InvalidDataset):
    pass


class EmptyAfterFiltering(DataError):
    pass


class SampleTooLarge(DataError):
    pass


class NonPositiveValue(DataError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(
            f"Box-Cox needs strictly positive values, got {value!r} at row {row}"
        )


class FitError(MedimuxError):
    pass


class InsufficientRows(FitError):
    pass


class RankDeficient(FitError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"Design matrix is rank deficient at column {column}")


class SingularResidualCovariance(FitError):
    pass


class SeparationDetected(FitError):
    pass


class CholeskyFailure(FitError):
    pass


class NumericalError(MedimuxError):
    pass


class NonPositiveScale(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class MedimuxWarning(UserWarning):
    pass


class NotConverged(MedimuxWarning):
    pass


class DegenerateTotalEffect(MedimuxWarning):
    pass
