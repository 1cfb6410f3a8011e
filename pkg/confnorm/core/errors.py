class ConfnormError(Exception):
    """Base error: carries a human readable detail and the CLI exit code."""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ParameterError(ConfnormError, ValueError):
    exit_code = 2


class ShapeMismatchError(ConfnormError, ValueError):
    exit_code = 2


class DegenerateInputError(ConfnormError, ValueError):
    exit_code = 2


class DomainError(ConfnormError, ValueError):
    exit_code = 2


class InfeasibleMarginalsError(ConfnormError, ValueError):
    exit_code = 2


class EmptyClusterError(ConfnormError, ValueError):
    exit_code = 2


class InputFormatError(ConfnormError, ValueError):
    exit_code = 2


class NonConvergenceError(ConfnormError, ArithmeticError):
    """IPF ran out of steps. `result` holds the best iterate (converged=False)."""

    exit_code = 3

    def __init__(self, detail: str, result):
        super().__init__(detail)
        self.result = result

    @property
    def residual(self) -> float:
        return self.result.residual


class UndefinedMetricError(ConfnormError, ArithmeticError):
    exit_code = 4
