//! Linear Gaussian state space representation and its recursions.
//!
//! The model is in future form:
//!
//! ```text
//! y_t = Z α_t + ε_t,          ε_t ~ N(0, diag(h)),
//! α_{t+1} = T α_t + R η_t,    η_t ~ N(0, Q),        α_1 ~ N(a_1, P_1),
//! ```
//!
//! with `y_t` of dimension p and the state of dimension k. The filter
//! produces one-step predictions and the Gaussian likelihood, the smoother
//! adds full-sample state means, variances, and the lag-one covariances the
//! EM moments need, and companions simulate from the model and extend
//! predictions past the sample end.

mod filter;
mod model;
mod predict;
mod smoother;

pub use filter::{kalman_filter, FilterOutput};
pub(crate) use filter::invert_innovation;
pub use model::{stationary_covariance, StateSpace};
pub use predict::{forecast, simulate, Forecast};
pub use smoother::{kalman_smooth, SmoothOutput};
