"""Exception hierarchy shared by all symface modules.

Each class carries the CLI exit code it maps to, so the command line layer
can translate failures without knowing where they came from.
"""


class SymfaceError(Exception):
    exit_code = 1


class ParameterError(SymfaceError, ValueError):
    exit_code = 2


class ShapeError(ParameterError):
    pass


class ConfigError(ParameterError):
    pass


class DatasetIntegrityError(SymfaceError):
    exit_code = 3


class MissingInputError(SymfaceError):
    exit_code = 3


class OrganNotFoundError(SymfaceError):
    exit_code = 3


class SegmentationError(SymfaceError):
    exit_code = 3


class CheckpointError(SymfaceError):
    exit_code = 3


class MaskGenerationError(SymfaceError):
    exit_code = 3

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


class NumericError(SymfaceError, ArithmeticError):
    exit_code = 4
