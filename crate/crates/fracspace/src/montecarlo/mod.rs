//! Replicated simulation studies: designs, estimator batteries, and the
//! summary statistics used to compare them.
//!
//! [`simulate_dgp`] draws exact samples from four designs that cover the
//! univariate signal-plus-noise case, a bivariate system with short-memory
//! dynamics, correlated fractional shocks up to the singular r = 1 case, and
//! higher-dimensional systems with two components. [`run_study`] estimates
//! every cell of a (design × sample size) grid with a configurable battery
//! of likelihood and semiparametric methods on shared replications, records
//! parameter errors and the [`cointegration_angle`] between estimated and
//! true cointegration spaces, and aggregates RMSE, bias, and median error
//! into a [`StudyReport`] serializable as JSON or CSV.

mod angle;
mod dgp;
mod study;

pub use angle::cointegration_angle;
pub use dgp::{estimation_spec, simulate_dgp, DgpConfig, DgpSpec, DGP_SCHEMA};
pub use study::{
    run_study, CellReport, Estimator, MetricSummary, StudyConfig, StudyReport, REPORT_SCHEMA,
    STUDY_SCHEMA,
};
