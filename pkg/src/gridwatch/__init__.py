"""Line outage detection and localization for distribution grids.

Simulates voltage streams under outage scenarios, detects the change point
with a Bayesian posterior stopping rule (learning the post-outage statistics
online when unknown), and localizes out-of-service branches through the
collapse of pairwise conditional correlations.
"""

from .detect import (
    DetectionResult,
    Detector,
    GaussianModel,
    GeometricPrior,
    RunningMle,
    delay_bound,
    detect,
    fit_gaussian,
    kl_divergence,
    log_density,
    posterior_direct,
    posterior_trace_known,
)
from .errors import DeadIslandError, GridwatchError, InputError, NumericError
from .grid import (
    AdmittanceMatrix,
    Branch,
    GridTopology,
    apply_outage,
    build_admittance,
    catalog,
    eight_bus_loop,
    eight_bus_radial,
    grid_from_json,
    grid_to_json,
    load_grid,
    random_mesh,
    random_radial,
    reduced_admittance,
    resolve_grid,
    save_grid,
)
from .localize import (
    ConditionalCovariance,
    LocalizationReport,
    conditional_corr,
    conditional_cov,
    localize,
    partial_correlations,
)
from .powerflow import PowerFlowSolution, linear_sensitivity, solve_ac
from .simulate import (
    IncrementStream,
    InjectionModel,
    OutageScenario,
    complex_covariance,
    generate_stream,
    magnitude_covariance,
    read_measurements,
    sample_injections,
    theoretical_models,
    write_measurements,
)

__version__ = "0.1.0"

__all__ = [
    "AdmittanceMatrix",
    "Branch",
    "ConditionalCovariance",
    "DeadIslandError",
    "DetectionResult",
    "Detector",
    "GaussianModel",
    "GeometricPrior",
    "GridTopology",
    "GridwatchError",
    "IncrementStream",
    "InjectionModel",
    "InputError",
    "LocalizationReport",
    "NumericError",
    "OutageScenario",
    "PowerFlowSolution",
    "RunningMle",
    "apply_outage",
    "build_admittance",
    "catalog",
    "complex_covariance",
    "conditional_corr",
    "conditional_cov",
    "delay_bound",
    "detect",
    "eight_bus_loop",
    "eight_bus_radial",
    "fit_gaussian",
    "generate_stream",
    "grid_from_json",
    "grid_to_json",
    "kl_divergence",
    "linear_sensitivity",
    "load_grid",
    "localize",
    "log_density",
    "magnitude_covariance",
    "partial_correlations",
    "posterior_direct",
    "posterior_trace_known",
    "random_mesh",
    "random_radial",
    "read_measurements",
    "reduced_admittance",
    "resolve_grid",
    "sample_injections",
    "save_grid",
    "solve_ac",
    "theoretical_models",
    "write_measurements",
]
