"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent arguments (dimension mismatch, bad grid, ...)."""


class HypothesisError(InputError):
    """A potential violates a structural hypothesis it must satisfy by construction."""

    def __init__(self, message, hypothesis):
        super().__init__(message)
        self.hypothesis = hypothesis


class BlowUpError(ArithmeticError):
    """A trajectory left the finite region during integration."""

    def __init__(self, message, node):
        super().__init__(message)
        self.node = node


class OptimizerError(RuntimeError):
    """The path-space minimizer could not evaluate its objective."""


class ConfigError(ValueError):
    """Configuration document is invalid; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
