"""Exception types shared across taxiq modules."""


class TaxiqError(Exception):
    pass


class ConfigError(TaxiqError):
    """Config file could not be parsed; ``locus`` names the offending field."""

    def __init__(self, message, locus=None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


class SchemaError(ConfigError):
    pass


class NotStable(TaxiqError):
    """Raised when a queue has arrival rate >= capacity."""

    def __init__(self, message, queues=()):
        self.queues = tuple(queues)
        super().__init__(message)


class NonConvergence(TaxiqError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


class Infeasible(TaxiqError):
    pass


class InsufficientData(TaxiqError):
    pass


class TooFewSamples(InsufficientData):
    pass


class AllZero(TaxiqError):
    pass


class StateSpaceTooLarge(TaxiqError):
    pass


class EmptyWindow(TaxiqError):
    pass


class HeaderMismatch(TaxiqError):
    pass
