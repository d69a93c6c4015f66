"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter lies outside the domain an operation accepts."""


class SingularCovarianceError(ParameterError):
    """The noise covariance is singular (|c| = 1) but its inverse is needed."""


class DegeneratePathError(ParameterError):
    """Integration path of zero length (instance equals baseline)."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to reach its requested accuracy."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        detail = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({detail})"
