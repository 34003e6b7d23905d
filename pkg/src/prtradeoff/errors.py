"""Exception hierarchy shared by every module."""


class InvalidParameterError(ValueError):
    """An argument is outside the domain of the operation."""


class ContractViolationError(TypeError):
    """An operation received an object it is not defined for.

    Raised, for instance, when a stochastic estimator is handed to a
    routine that needs a deterministic map.
    """


class UndefinedPosteriorError(ValueError):
    """Bayes' rule was applied to a measurement with zero marginal mass."""


class TooLargeError(ValueError):
    """An exhaustive enumeration would exceed its size guard."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class VerificationFailure(AssertionError):
    """A verified inequality did not hold; ``counterexample`` holds the witness."""

    def __init__(self, message: str, counterexample=None):
        self.counterexample = counterexample
        super().__init__(message)
