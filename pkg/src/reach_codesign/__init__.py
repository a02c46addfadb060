"""Reachability-based control co-design for blended-wing-body longitudinal dynamics."""

from .aero import AeroTable, AircraftParams, SurrogateConfig, default_table, generate_table, interpolate
from .control import (
    WEIGHT_PRESETS,
    PerformanceReport,
    TrackingTask,
    WeightSpec,
    l2_norm,
    simulate_linear_tracking,
    simulate_nonlinear_tracking,
    solve_care,
)
from .errors import (
    HorizonTooLongError,
    InvalidArgumentError,
    NumericalError,
    ObjectiveEvaluationError,
    OutOfDomainError,
    ReachCodesignError,
    RiccatiError,
    SaturatedTrimError,
    TrimFailureError,
)
from .flight import Design, TrimPoint, linearize, nonlinear_rhs, trim
from .lti import LtiSystem, TimeGrid, Trajectory
from .optim import OptProblem, OptResult, ReachContext, solve
from .reach import InputBox, ReachSet, hull_volume, sample_reach_set, support_length

__version__ = "0.1.0"
