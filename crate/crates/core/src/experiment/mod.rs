//! Convergence-rate experiments, bound checks and property suites.

mod bound_check;
mod config;
mod convergence;
mod fit;
mod suites;

pub use bound_check::{equivariant_bound, run_bound_check, BoundCheckReport, SizeCheck};
pub use config::{ExperimentConfig, Model, QuadratureSpec, DEFAULT_KERNEL_BANDWIDTH, DEFAULT_KERNEL_FLOOR};
pub use convergence::{
    limit_is_adequate, read_rows, run_convergence, write_rows, ConvergenceRow, ConvergenceTable, LimitMethod,
    RunMetadata, STDERR_NOISE_FLOOR, STDERR_TO_MAE,
};
pub use fit::{fit_rate, least_squares, median, median_by_size, median_inversions, theory_slope, RateFit};
pub use suites::{
    bounded_difference_scaling, equivariance_check, multiset_oracle_check, run_suites, EquivarianceResult,
    MultisetResult, ScalingResult, SuiteOutcome, SuiteReport, SuiteSelector, SuiteSizes, EQUIVARIANCE_TOLERANCE,
};
