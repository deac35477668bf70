"""Exception types shared across the lab.

The CLI maps these onto exit codes: parameter and validation problems
give 2, numerical non-convergence gives 3, I/O problems give 4.
"""


class LabError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(LabError, ValueError):
    """A parameter lies outside its admissible range."""


class UndefinedInputError(ParameterError):
    """The quantity is not defined for this input (e.g. d_min with n < 2)."""


class ValidationError(LabError, ValueError):
    """A configuration violates the non-overlap or containment invariant."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations


class SingularityError(LabError, ValueError):
    """A kernel was evaluated at its singular point."""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain where the operation makes sense."""


class MassError(DomainError):
    """Two measures that must carry equal mass do not."""


class GeometryError(LabError, ValueError):
    """A requested geometric placement is infeasible."""


class ConvergenceError(LabError, RuntimeError):
    """An iterative method failed to converge.

    ``history`` holds whatever residual or update sequence the solver
    recorded, ``info`` any extra diagnostic (e.g. d_min of the cloud).
    """

    def __init__(self, message, history=None, info=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
        self.info = info or {}


class SaturationError(ConvergenceError):
    """A rejection sampler exhausted its attempt budget."""

    def __init__(self, message, attempts=0):
        super().__init__(message, info={"attempts": attempts})
        self.attempts = attempts


class ConditioningError(ConvergenceError):
    """A least-squares system was too ill-conditioned to trust."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(message, info={"condition": condition})
        self.condition = condition


class ReportIOError(LabError, OSError):
    """Output could not be written."""
