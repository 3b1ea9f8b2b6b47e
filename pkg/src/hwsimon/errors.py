"""Exception hierarchy. Each family maps onto one CLI exit code."""


class SimonError(Exception):
    exit_code = 1


class UsageError(SimonError, ValueError):
    exit_code = 2


class DataError(SimonError):
    exit_code = 3


class ResourceError(SimonError):
    exit_code = 4


class NumericalError(SimonError, ArithmeticError):
    exit_code = 5


class InconsistentError(DataError):
    """No candidate survives the observations."""


class RejectedGuessError(UsageError):
    pass


class UnsupportedStructureError(UsageError):
    pass


class InvalidSequenceError(UsageError):
    pass


class BoundInapplicableError(NumericalError):
    pass
