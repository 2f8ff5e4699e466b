"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MrlftError(Exception):
    exit_code = 3


class ModelError(MrlftError):
    """Malformed or inconsistent model description."""

    exit_code = 2


class IllPosedLFTError(ModelError):
    def __init__(self, message, blocks=()):
        super().__init__(message)
        self.blocks = tuple(blocks)


class AlgebraicLoopError(ModelError):
    pass


class NonAffineError(ModelError):
    pass


class NumericalError(MrlftError):
    exit_code = 3


class BudgetExhausted(MrlftError):
    exit_code = 4


class ModelFileError(ModelError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column
