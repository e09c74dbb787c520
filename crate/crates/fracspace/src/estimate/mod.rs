//! Maximum likelihood estimation of fractional components models.
//!
//! Estimation runs in two stages. An expectation-conditional-maximization
//! loop first walks the likelihood uphill cheaply: each iteration smooths
//! at the current parameters, takes one Newton step on the expected
//! complete-data objective for the transition and loading parameters, and
//! updates the noise variances in closed form. A gradient stage then
//! polishes with quasi-Newton steps on the exact likelihood, using the
//! analytic score that falls out of the same smoothed moments, and standard
//! errors come from the prediction-error form of the information matrix.

mod ecm;
mod fisher;
mod fit;
mod moments;
mod score;
mod structured;
mod transform;

pub use ecm::{ecm_iterate, EmStep};
pub use fisher::{fisher_information, FisherOutput};
pub use fit::{fit, FitOptions, FitResult};
pub use moments::{smoother_moments, smoother_moments_structured, SmootherMoments};
pub use score::score;
pub use structured::filter_structured;
