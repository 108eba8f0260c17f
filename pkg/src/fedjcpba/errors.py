"""Exception hierarchy shared by every module."""


class FedJCPBAError(Exception):
    pass


class InvalidPartition(FedJCPBAError, ValueError):
    pass


class OutOfRange(FedJCPBAError, ValueError):
    pass


class ZeroRate(FedJCPBAError, ZeroDivisionError):
    """A link rate is zero, so the client cannot be reached this round."""


class EmptyClientSet(FedJCPBAError, ValueError):
    pass


class DimensionMismatch(FedJCPBAError, ValueError):
    pass


class DegenerateClient(FedJCPBAError, ValueError):
    pass


class TooManyClients(FedJCPBAError, ValueError):
    pass


class Infeasible(FedJCPBAError):
    """No allocation satisfies the constraints.

    ``constraints`` lists the violated identifiers ("C1" ... "C5").
    """

    def __init__(self, message, constraints=()):
        super().__init__(message)
        self.constraints = tuple(constraints)


class InfeasibleC5(Infeasible):
    def __init__(self, message):
        super().__init__(message, ("C5",))


class InfeasibleMemory(Infeasible):
    def __init__(self, message):
        super().__init__(message, ("C3",))


class InfeasibleBox(Infeasible):
    def __init__(self, message):
        super().__init__(message, ("C3", "C4"))


class ConfigError(FedJCPBAError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class UnknownKey(ValidationError):
    def __init__(self, key):
        super().__init__(key, "unknown key")
