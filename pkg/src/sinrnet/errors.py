class SinrNetError(Exception):
    pass


class ParameterError(SinrNetError, ValueError):
    pass


class ConfigurationError(SinrNetError):
    pass


class ContractViolation(SinrNetError):
    pass


class ConstructionError(SinrNetError):
    pass


class Unverifiable(SinrNetError):
    pass


class HorizonReached(SinrNetError):
    """Raised inside a simulation once its round horizon is crossed."""
