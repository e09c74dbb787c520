//! ARMA approximation of the truncated fractional integration operator.
//!
//! For a memory parameter `d`, the target is the expansion
//! `Δ^{-d}_+ = Σ_j ψ_j(d) L^j` with `ψ_j(d) = π_j(-d)`. An ARMA(v,w) filter
//!
//! ```text
//! (1 + m_1 L + … + m_w L^w) / (1 − a_1 L − … − a_v L^v)
//! ```
//!
//! is chosen to match those weights in finite-sample weighted mean squared
//! error,
//!
//! ```text
//! MSE_n^d(φ) = (1/n) Σ_{j=1}^{n} (n − j + 1) (ψ̃_j(φ) − ψ_j(d))²,
//! ```
//!
//! so early impulse responses count roughly `n` times more than the last
//! ones. Minimization runs in an unconstrained space: stable AR and
//! invertible MA parts are mapped to partial autocorrelations and then
//! through the Fisher z transform; for `d ≥ 1` one AR unit root is imposed
//! and only the remaining factor is optimized.
//!
//! [`build_table`] sweeps a grid of `d` values, smooths each transformed
//! coefficient path with a GCV-penalized cubic regression spline, and blends
//! the stable and unit-root branches across `d = 1` with a sine weight. The
//! result is a serializable [`ApproxTable`] giving coefficients and their
//! `d`-derivatives at any `d` in the grid range. AR/MA truncation filters of
//! the same operator are provided as baselines.

mod fit;
mod pacf;
mod params;
mod spline;
mod table;

pub use fit::fit_point;
pub use pacf::{coeffs_to_pacf, fisher_z, fisher_z_inv, pacf_to_coeffs, Z_CAP};
pub use params::{approx_mse, impulse_responses, ArmaParams};
pub use spline::SplineFit;
pub use table::{
    build_table, load_or_build_table, truncation_coeffs, ApproxSpec, ApproxTable, ArTruncation,
    CoeffSource, Coeffs, CoeffsWithDeriv, MaTruncation, TruncationKind, DEFAULT_GRID_STEP, D_MAX,
    D_MIN,
};
