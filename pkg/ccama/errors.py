"""Exception types raised by the toolkit.

``InvalidInputError`` covers anything wrong with what the caller passed in,
``NumericalError`` covers failures of the numerics themselves. The CLI maps the
two families onto exit codes 3 and 4.
"""


class CcamaError(Exception):
    """Base class for all toolkit errors."""

    pass


class InvalidInputError(CcamaError, ValueError):
    """Raised for malformed matrices, options or files."""

    pass


class NumericalError(CcamaError, ArithmeticError):
    """Raised when a numerical procedure cannot produce a trustworthy result."""

    pass


class UnstableGeneratorError(NumericalError):
    def __init__(self, max_real_part: float):
        self.max_real_part = max_real_part
        super().__init__(f"unstable generator: max Re(eig) = {max_real_part:.6e}")


class IllConditionedError(NumericalError):
    def __init__(self, message: str, condition: float):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3e})")


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, message: str, min_eigenvalue: float | None = None):
        self.min_eigenvalue = min_eigenvalue
        if min_eigenvalue is not None:
            message = f"{message}: min eigenvalue = {min_eigenvalue:.6e}"
        super().__init__(message)


class DualInfeasibleError(NotPositiveDefiniteError):
    def __init__(self, min_eigenvalue: float | None = None):
        super().__init__("dual point infeasible for logdet", min_eigenvalue)


class PowerIterationError(NumericalError):
    def __init__(self, previous: float, last: float, iterations: int):
        self.previous = previous
        self.last = last
        self.iterations = iterations
        super().__init__(
            f"power iteration did not converge in {iterations} iterations "
            f"(last Rayleigh quotients {previous:.10e}, {last:.10e})"
        )


class BacktrackingError(NumericalError):
    def __init__(self, rho_trace: list[float], pd_residual: float, ascent_residual: float):
        self.rho_trace = list(rho_trace)
        self.pd_residual = pd_residual
        self.ascent_residual = ascent_residual
        super().__init__(
            f"backtracking failed after {len(rho_trace)} trials "
            f"(last rho {rho_trace[-1] if rho_trace else float('nan'):.3e}, "
            f"min eig of dual operator {pd_residual:.3e}, ascent shortfall {ascent_residual:.3e})"
        )


class InnerLoopError(NumericalError):
    def __init__(self, iterations: int, relative_change: float):
        self.iterations = iterations
        self.relative_change = relative_change
        super().__init__(
            f"inner X-update did not converge in {iterations} iterations "
            f"(last relative change {relative_change:.3e})"
        )


class InconsistentRealizationError(NumericalError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")
