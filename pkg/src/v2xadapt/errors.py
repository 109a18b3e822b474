"""Exception types shared across the package."""


class V2XAdaptError(Exception):
    """Base class for all package errors."""


class DimensionError(V2XAdaptError, ValueError):
    pass


class DomainError(V2XAdaptError, ValueError):
    pass


class ContractError(V2XAdaptError, ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(V2XAdaptError, ValueError):
    pass


class CoverageError(V2XAdaptError, ValueError):
    """A trajectory does not reach the requested horizon."""


class ProtocolError(V2XAdaptError, RuntimeError):
    """A transport returned a response that does not follow the wire contract."""


class NonFiniteLossError(V2XAdaptError, FloatingPointError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump
