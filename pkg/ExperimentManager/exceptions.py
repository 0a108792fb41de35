class AbceiError(Exception):
    pass


class DimensionError(AbceiError, ValueError):
    pass


class DomainError(AbceiError, ValueError):
    pass


class ContractError(AbceiError, ValueError):
    pass


class TapeError(AbceiError, RuntimeError):
    pass


class TrainingError(AbceiError, RuntimeError):
    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class BalanceError(AbceiError, ValueError):
    """Raised when a batch or dataset lacks a treated or a control unit."""


class SchemaError(AbceiError, ValueError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f'row {row}: {message}'
        super().__init__(message)
        self.row = row


class MetricUnavailableError(AbceiError, ValueError):
    pass


class NumericError(AbceiError, ArithmeticError):
    pass


class ConfigError(AbceiError, ValueError):
    pass


class ExperimentError(AbceiError, RuntimeError):
    pass
