"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An argument broke a documented precondition."""


class IllConditionedKernelError(RuntimeError):
    """Gram matrix could not be factorized even after jitter escalation."""


class FittingFailedError(RuntimeError):
    """Every hyperparameter restart failed; carries the best diagnostics seen."""


class GradientEvaluationError(RuntimeError):
    """Objective returned a non-finite value during numeric differentiation."""


class OptimizationFailedError(RuntimeError):
    """Every action-optimization restart failed."""


class CheckpointError(RuntimeError):
    """A model checkpoint could not be read or has an unknown version."""
