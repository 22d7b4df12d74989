"""Exception types shared across the package."""


class TbmaError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TbmaError):
    """A scenario or sweep configuration is invalid."""


class DimensionError(TbmaError):
    """Requested construction is impossible for the given dimensions."""


class DivergenceError(TbmaError):
    """The iterative detector produced non-finite values.

    Carries the iteration index at which the blow-up was detected.
    """

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"detector diverged at iteration {iteration}")


class EnumerationBudgetError(TbmaError):
    """Exact-MAP enumeration would exceed the hypothesis budget."""

    def __init__(self, hypotheses: int, budget: int):
        self.hypotheses = hypotheses
        self.budget = budget
        super().__init__(
            f"exact enumeration needs {hypotheses} hypotheses, "
            f"exceeding the budget of {budget}"
        )


class SweepDivergenceError(TbmaError):
    """Too many trials diverged for the sweep result to be trusted."""
