//! Maximum likelihood estimation of multivariate fractional unobserved-components
//! models in approximate state-space form.
//!
//! A vector of `p` observables is decomposed into `s` common fractionally
//! integrated components, optional short-memory AR(1) components, and noise:
//!
//! ```text
//! y_t = Λ x_t + Γ z_t + ε_t,      Δ^{d_j}_+ x_jt = ξ_jt,
//! ```
//!
//! where `Δ^{d}_+` is the truncated (type II) fractional difference operator.
//! The long-memory operator `Δ^{-d}_+` is replaced by a low-order ARMA filter
//! whose impulse responses match the fractional ones in weighted mean squared
//! error; the resulting model is a finite linear Gaussian state space, so the
//! likelihood comes from the Kalman filter and estimation combines ECM steps
//! with a quasi-Newton stage on the transformed parameter vector.
//!
//! Module map:
//!
//! * [`fracdiff`] — fractional difference weights, filtering, exact simulation.
//! * [`arma`] — ARMA(v,w) approximation of `Δ^{-d}_+`: pointwise fits, the
//!   smoothed coefficient table over a grid of `d`, truncation baselines.
//! * [`statespace`] — Kalman filter/smoother/forecasts for general linear
//!   Gaussian models, discrete Lyapunov solver, simulation.
//! * [`fc`] — assembly of the unobserved-components model into state-space
//!   matrices, the parameter layout, analytic system Jacobians, component
//!   extraction.
//! * [`estimate`] — smoothed moments, ECM iteration, analytic score, Fisher
//!   information, and the full fit driver.
//! * [`semiparam`] — exact local Whittle and narrow-band least squares, used
//!   both as estimators in their own right and for starting values.
//! * [`montecarlo`] — data generating processes, cointegration-space angle
//!   metrics, and the replication study harness.

pub mod arma;
pub mod error;
pub mod estimate;
pub mod fc;
pub mod fracdiff;
pub mod montecarlo;
pub mod optim;
pub mod semiparam;
pub mod series;
pub mod statespace;

pub use error::{Error, Result};
pub use series::Series;
