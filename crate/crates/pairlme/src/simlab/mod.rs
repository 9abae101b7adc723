//! Simulation lab: finite populations, stratified two-stage samples, and
//! bias/efficiency studies across the estimators.

mod population;
mod scenario;
mod study;

pub use population::{draw_sample, generate_population, DrawnSample, PopCluster, Population};
pub use scenario::{Informative, SimScenario, SizeRule, XDist, PRESETS};
pub use study::{
    errors_for, min_one_sided_difference, replicate_rng, run_replicate, run_study, six_parameters, FitSummary, Metric,
    MetricsTable, ReplicateRecord, StudyOptions, StudyResult, ESTIMATORS, FAILURE_FLAG, FD_STEP, PARAMETERS,
};
