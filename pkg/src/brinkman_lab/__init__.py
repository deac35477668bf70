"""Numerical lab for Stokes flow around many small spheres and its Brinkman limit."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConditioningError,
    ConvergenceError,
    DomainError,
    GeometryError,
    LabError,
    MassError,
    ParameterError,
    ReportIOError,
    SaturationError,
    SingularityError,
    UndefinedInputError,
    ValidationError,
)
from .config_geometry import ParticleConfiguration, classify_concentration, min_pair_distance  # noqa: E402
from .sampling import density_from_spec, sample_conditioned  # noqa: E402
from .solver import solve  # noqa: E402
from .brinkman import solve_brinkman  # noqa: E402
from .study import StudyConfig, StudyReport  # noqa: E402

__all__ = [
    "__version__",
    "ConditioningError",
    "ConvergenceError",
    "DomainError",
    "GeometryError",
    "LabError",
    "MassError",
    "ParameterError",
    "ReportIOError",
    "SaturationError",
    "SingularityError",
    "UndefinedInputError",
    "ValidationError",
    "ParticleConfiguration",
    "classify_concentration",
    "min_pair_distance",
    "density_from_spec",
    "sample_conditioned",
    "solve",
    "solve_brinkman",
    "StudyConfig",
    "StudyReport",
]
