//! Metrics records and convergence verification.

pub mod convergence;
mod metrics;

pub use convergence::{
    check_convergence, check_gd_rate, estimate_variance_constants, theorem_bound, ConvergenceConfig,
    ConvergenceReport, GdRateReport, QuadraticProblem, QuadraticWorkload, StepCheck, TheoremParams,
    VarianceEstimate,
};
pub use metrics::{emit_metrics, read_metrics_csv, read_metrics_jsonl, MetricsFormat, MetricsLog, MetricsRow};
