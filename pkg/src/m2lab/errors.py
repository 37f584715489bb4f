"""Exception types raised across the package."""


class M2LabError(Exception):
    """Base class for all package errors."""


class DimensionError(M2LabError, ValueError):
    pass


class DegenerateVectorError(M2LabError, ValueError):
    pass


class EvaluationError(M2LabError, ArithmeticError):
    pass


class ConfigurationError(M2LabError, ValueError):
    pass


class VocabularyError(M2LabError, ValueError):
    pass


class LengthError(M2LabError, ValueError):
    pass


class ExtensionError(M2LabError, ValueError):
    pass


class EmptyInputError(M2LabError, ValueError):
    pass


class BatchContractError(M2LabError, ValueError):
    pass


class DataError(M2LabError, ValueError):
    pass


class SamplingError(M2LabError, ValueError):
    pass


class BoundsError(M2LabError, IndexError):
    pass


class UndefinedQueryError(M2LabError, KeyError):
    pass


class TrainingFailure(M2LabError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")
