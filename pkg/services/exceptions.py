class InvalidArgumentError(Exception):
    """Raised when an operation is called outside its preconditions (bad domain, step, range)."""
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class StepSizeError(InvalidArgumentError):
    """Raised when an explicit scheme is asked to step beyond its stability bound or blows up."""
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class NumericFailureError(Exception):
    """Raised when an iterative solver fails to converge."""
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class BudgetExceededError(Exception):
    """Raised when a simulation exhausts its particle or step budget before terminating."""
    def __init__(self, message, consumed=None):
        super().__init__(message)
        self.message = message
        self.consumed = consumed or {}


class InvariantViolationError(Exception):
    """Raised when an internal invariant that should hold by construction is broken."""
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class ConfigValidationError(Exception):
    """Raised when a run configuration is malformed or fails validation."""
    def __init__(self, message):
        super().__init__(message)
        self.message = message
