"""Symmetry-broken linear octupole RF traps: analytic model, Laplace oracle,
diagnosis of perturbation coefficients and iterative RF-amplitude compensation."""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    ConfigError,
    DecompositionError,
    DiagnosisError,
    FlatFieldError,
    InvalidGeometryError,
    ModelViolationError,
    PatternMismatchError,
    SolverError,
)
from .geometry import (
    DefectSet,
    ElectrodeLayout,
    TrapConfig,
    decompose_layout,
    layout_from_defects,
    random_layout,
)
from .analytic import (
    PerturbationCoeffs,
    ScalingCoeffs,
    analytic_minima,
    analytic_pseudo,
    analytic_pseudo_gradient,
    analytic_rf_surface,
    basis_eval,
    coeffs_from_defects,
    scaling_coeffs,
)
from .minima import MinimaPattern, make_pattern, minima_metrics
from .solver import (
    BoundaryProblem,
    ElectrodeSolver,
    PotentialGrid,
    find_minima_numeric,
    numeric_minima,
    pseudo_map,
    solve_laplace,
)
from .compensation import (
    CalibrationConstants,
    CorrectionHistory,
    VoltageBias,
    calibrate_voltage_map,
    designed_pattern,
    fit_coefficients,
    iterate_correction,
    voltages_from_coeffs,
)
