//! Truncated (type II) fractional differencing.
//!
//! The fractional difference operator expands as `Δ^d = Σ_j π_j(d) L^j` with
//!
//! ```text
//! π_0(d) = 1,    π_j(d) = π_{j-1}(d) · (j - 1 - d) / j,
//! ```
//!
//! and the type II convention sets all pre-sample values to zero, so applying
//! `Δ^d_+` to `x_1..x_n` touches at most `n` weights:
//!
//! ```text
//! (Δ^d_+ x)_t = Σ_{i=0}^{t-1} π_i(d) x_{t-i}.
//! ```
//!
//! Fractional *integration* is the same filter with weights `π_j(-d)`; those
//! are the moving-average coefficients `ψ_j(d)` that the ARMA approximation
//! targets. The multiplicative recursion is used throughout — it is exact in
//! floating point up to rounding and never touches the Gamma function, which
//! overflows long before the lag counts used here.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::series::Series;

/// Filter weights `π_0(d), …, π_{count-1}(d)`.
pub type FracCoeffs = Vec<f64>;

/// Series length above which filtering switches from direct convolution to
/// FFT. Below this the O(n²) loop is faster in practice and exactly ordered.
const FFT_THRESHOLD: usize = 4096;

/// Expansion weights of `Δ^d` up to lag `count - 1`.
///
/// `count` must be positive. The weights of the *integration* operator
/// `Δ^{-d}` are `pi_coefficients(-d, count)`.
pub fn pi_coefficients(d: f64, count: usize) -> Result<FracCoeffs> {
    if count == 0 {
        return Err(Error::invalid("pi_coefficients: count must be positive"));
    }
    if !d.is_finite() {
        return Err(Error::invalid("pi_coefficients: d must be finite"));
    }
    let mut pi = Vec::with_capacity(count);
    pi.push(1.0);
    for j in 1..count {
        let jf = j as f64;
        let prev = pi[j - 1];
        pi.push(prev * (jf - 1.0 - d) / jf);
    }
    Ok(pi)
}

/// Derivatives `∂π_j(d)/∂d` alongside the weights themselves.
///
/// Differentiating the recursion gives
/// `π_j' = π_{j-1}' · (j-1-d)/j − π_{j-1}/j`, which the AR/MA truncation
/// Jacobians consume directly.
pub fn pi_coefficients_with_deriv(d: f64, count: usize) -> Result<(FracCoeffs, Vec<f64>)> {
    let pi = pi_coefficients(d, count)?;
    let mut dpi = Vec::with_capacity(count);
    dpi.push(0.0);
    for j in 1..count {
        let jf = j as f64;
        dpi.push(dpi[j - 1] * (jf - 1.0 - d) / jf - pi[j - 1] / jf);
    }
    Ok((pi, dpi))
}

/// Applies the truncated filter `Σ_{i=0}^{t-1} w_i x_{t-i}` to a slice.
///
/// Direct convolution for short inputs, FFT for long ones; both orderings
/// agree to rounding and the direct path keeps small-n results exactly
/// reproducible.
pub fn truncated_filter(weights: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n <= FFT_THRESHOLD {
        let mut out = vec![0.0; n];
        for (t, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..=t.min(weights.len() - 1) {
                acc += weights[i] * x[t - i];
            }
            *o = acc;
        }
        out
    } else {
        fft_convolve_truncated(weights, x)
    }
}

/// Linear convolution via FFT, truncated to the length of `x`.
fn fft_convolve_truncated(weights: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = weights.len().min(n);
    let size = (n + m).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut a: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut b: Vec<Complex<f64>> = weights[..m]
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fft.process(&mut a);
    fft.process(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= *bi;
    }
    ifft.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..n].iter().map(|c| c.re * scale).collect()
}

/// Type II fractional difference of each column: `x ↦ Δ^d_+ x`.
pub fn fracdiff_filter(x: &Series, d: f64) -> Result<Series> {
    if x.is_empty() {
        return Err(Error::invalid("fracdiff_filter: empty series"));
    }
    let weights = pi_coefficients(d, x.len())?;
    let cols: Vec<Vec<f64>> = (0..x.ncols())
        .map(|j| truncated_filter(&weights, &x.column(j)))
        .collect();
    Series::from_columns(x.names().to_vec(), &cols)
}

/// Convenience wrapper of [`fracdiff_filter`] for a plain slice.
pub fn fracdiff_slice(x: &[f64], d: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("fracdiff_slice: empty input"));
    }
    let weights = pi_coefficients(d, x.len())?;
    Ok(truncated_filter(&weights, x))
}

/// Exact type II fractionally integrated series from a given shock stream:
/// `x_t = Σ_{i=0}^{t-1} π_i(-d) ξ_{t-i}` for each column of `shocks`.
///
/// `n` must not exceed the number of supplied shocks; extra shocks are
/// ignored so a single stream can serve both a fit sample and its forecast
/// extension.
pub fn fracint_simulate(d: f64, n: usize, shocks: &Series) -> Result<Series> {
    if n == 0 {
        return Err(Error::invalid("fracint_simulate: n must be positive"));
    }
    if shocks.len() < n {
        return Err(Error::invalid(format!(
            "fracint_simulate: {} shocks for n = {}",
            shocks.len(),
            n
        )));
    }
    let weights = pi_coefficients(-d, n)?;
    let cols: Vec<Vec<f64>> = (0..shocks.ncols())
        .map(|j| {
            let xi: Vec<f64> = (0..n).map(|t| shocks.get(t, j)).collect();
            truncated_filter(&weights, &xi)
        })
        .collect();
    Series::from_columns(shocks.names().to_vec(), &cols)
}
