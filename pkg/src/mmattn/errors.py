"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A caller violated an operation's precondition."""


class NumericalFailure(ArithmeticError):
    """A non-finite value showed up where finite values are required."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
