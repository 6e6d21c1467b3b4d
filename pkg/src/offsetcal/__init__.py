"""Offset calibration for sensor networks: constrained bounds, estimator and simulation."""

__version__ = "0.1.0"

from .bounds import (  # noqa: E402
    BoundReport,
    FisherInformation,
    ccrb,
    fim_general,
    fim_homoscedastic_closed_form,
    optimal_constraint_from_fim,
    trace_average_ref_homoscedastic,
    trace_single_ref_homoscedastic,
    traces_diagonal_noise,
)
from .estimator import EstimatorConfig, EstimateResult, estimate_offsets, feasible_projection  # noqa: E402
from .model import (  # noqa: E402
    GeneralStationary,
    Homoscedastic,
    IndependentDiagonal,
    NetworkShape,
    ReferenceConstraint,
    SingularSystemError,
    average_reference_constraint,
    single_reference_constraint,
    single_source_projector,
)
