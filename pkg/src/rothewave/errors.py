"""Exception types shared across the package.

The CLI maps these onto its exit-code contract:
configuration/admissibility problems -> 3, solver nonconvergence -> 2,
audit failures -> 4.
"""


class ConfigurationError(ValueError):
    """Invalid configuration, inadmissible data, or violated precondition."""


class HypothesisViolated(ConfigurationError):
    """A structural smallness condition fails (the step-constraint bound
    is nonpositive), so no step size is admissible."""


class InadmissibleStep(ConfigurationError):
    """A step solve was requested on a grid that fails the step-size
    constraint."""


class AuditFailure(RuntimeError):
    """A sampling audit or a study-level check found a violated condition."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class StepNonconvergence(RuntimeError):
    """The per-step solver exhausted its budget.

    Carries the best iterate and the residual history for post-mortem.
    """

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = history if history is not None else []
