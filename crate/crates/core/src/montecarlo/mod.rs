//! Simulation designs, exact population targets and the replication engine.

pub mod dgp;
pub mod oracle;
pub mod study;

pub use dgp::{generate, generate_replicate, CovariateLaw, DgpSpec, LatentTruth};
pub use oracle::{oracle_estimands, OracleCell, OracleEstimands};
pub use study::{resolve_truth, run_regressogram_study, run_study, McSummary, RegressogramStudy, StudyEstimator};
