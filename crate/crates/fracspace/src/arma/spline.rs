//! Penalized cubic regression splines with GCV-chosen smoothing.
//!
//! The table sweep produces one value of each transformed ARMA coordinate
//! per grid point; these paths carry a little optimizer noise on top of a
//! smooth trend. Each path is smoothed by a cubic B-spline basis with
//! evenly spaced knots, penalized by the integrated squared second
//! derivative, with the penalty weight chosen by generalized
//! cross-validation:
//!
//! ```text
//! GCV(λ) = n ‖y − S_λ y‖² / (n − tr S_λ)².
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic spline order (degree 3).
const ORDER: usize = 4;

/// Grid of candidate log10 penalty weights for the GCV search.
const LOG_LAMBDA_RANGE: (f64, f64) = (-10.0, 4.0);
const LAMBDA_STEPS: usize = 57;

/// A fitted cubic regression spline: padded knot vector plus basis
/// coefficients. Evaluation clamps to the fitted interval, so lookups at the
/// interval edges are well-defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFit {
    knots: Vec<f64>,
    coeffs: Vec<f64>,
    lo: f64,
    hi: f64,
}

/// Cox–de Boor evaluation of all cubic B-splines that are nonzero at `x`.
///
/// Returns the index of the knot span and the `ORDER` basis values.
fn basis_at(knots: &[f64], x: f64) -> (usize, [f64; ORDER]) {
    let n_basis = knots.len() - ORDER;
    // Locate the span: largest i with knots[i] <= x < knots[i+1], clamped to
    // the interior so boundary evaluation works.
    let mut span = match knots[..=n_basis]
        .binary_search_by(|k| k.partial_cmp(&x).unwrap())
    {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    span = span.clamp(ORDER - 1, n_basis - 1);

    // Triangular recurrence for B-spline values on the located span.
    let mut vals = [0.0; ORDER];
    vals[0] = 1.0;
    for k in 1..ORDER {
        let mut saved = 0.0;
        for r in 0..k {
            let left = knots[span + 1 + r - k];
            let right = knots[span + 1 + r];
            let denom = right - left;
            let term = if denom > 0.0 { vals[r] / denom } else { 0.0 };
            vals[r] = saved + (right - x) * term;
            saved = (x - left) * term;
        }
        vals[k] = saved;
    }
    (span, vals)
}

/// First derivatives of the nonzero cubic B-splines at `x`.
fn basis_deriv_at(knots: &[f64], x: f64) -> (usize, [f64; ORDER]) {
    let n_basis = knots.len() - ORDER;
    let mut span = match knots[..=n_basis]
        .binary_search_by(|k| k.partial_cmp(&x).unwrap())
    {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    span = span.clamp(ORDER - 1, n_basis - 1);

    // Values of the order-3 (quadratic) basis on the same span.
    let mut low = [0.0; ORDER - 1];
    low[0] = 1.0;
    for k in 1..ORDER - 1 {
        let mut saved = 0.0;
        for r in 0..k {
            let left = knots[span + 1 + r - k];
            let right = knots[span + 1 + r];
            let denom = right - left;
            let term = if denom > 0.0 { low[r] / denom } else { 0.0 };
            low[r] = saved + (right - x) * term;
            saved = (x - left) * term;
        }
        low[k] = saved;
    }
    // Derivative formula: B'_{i,4} = 3 (B_{i,3}/(t_{i+3}-t_i) - B_{i+1,3}/(t_{i+4}-t_{i+1})).
    let mut deriv = [0.0; ORDER];
    let deg = (ORDER - 1) as f64;
    for j in 0..ORDER {
        let i = span + 1 + j - ORDER;
        let mut val = 0.0;
        if j >= 1 {
            let denom = knots[i + ORDER - 1] - knots[i];
            if denom > 0.0 {
                val += deg * low[j - 1] / denom;
            }
        }
        if j < ORDER - 1 {
            let denom = knots[i + ORDER] - knots[i + 1];
            if denom > 0.0 {
                val -= deg * low[j] / denom;
            }
        }
        deriv[j] = val;
    }
    (span, deriv)
}

/// Second derivatives of the nonzero cubic B-splines at `x`, used for the
/// roughness penalty.
///
/// Applies the B-spline derivative identity twice, starting from the two
/// nonzero linear (order 2) basis values on the span.
fn basis_deriv2_at(knots: &[f64], x: f64) -> (usize, [f64; ORDER]) {
    let n_basis = knots.len() - ORDER;
    let mut span = match knots[..=n_basis]
        .binary_search_by(|k| k.partial_cmp(&x).unwrap())
    {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    span = span.clamp(ORDER - 1, n_basis - 1);

    // Nonzero linear basis values on the span: lin[0] = B_{span-1,2},
    // lin[1] = B_{span,2}.
    let mut lin = [0.0; 2];
    {
        let denom = knots[span + 1] - knots[span];
        if denom > 0.0 {
            lin[0] = (knots[span + 1] - x) / denom;
            lin[1] = (x - knots[span]) / denom;
        }
    }
    // Value of B_{i,2} at x, zero outside the two active ones.
    let lin_val = |i: isize| -> f64 {
        if i == span as isize - 1 {
            lin[0]
        } else if i == span as isize {
            lin[1]
        } else {
            0.0
        }
    };
    // Derivative of B_{i,3}: 2 [ B_{i,2}/(t_{i+2}-t_i) - B_{i+1,2}/(t_{i+3}-t_{i+1}) ].
    let db3 = |i: isize| -> f64 {
        if i < 0 {
            return 0.0;
        }
        let iu = i as usize;
        let mut val = 0.0;
        let denom = knots[iu + 2] - knots[iu];
        if denom > 0.0 {
            val += 2.0 * lin_val(i) / denom;
        }
        let denom = knots[iu + 3] - knots[iu + 1];
        if denom > 0.0 {
            val -= 2.0 * lin_val(i + 1) / denom;
        }
        val
    };
    // Second derivative of B_{i,4}: 3 [ B'_{i,3}/(t_{i+3}-t_i) - B'_{i+1,3}/(t_{i+4}-t_{i+1}) ].
    let mut deriv2 = [0.0; ORDER];
    for (j, out) in deriv2.iter_mut().enumerate() {
        let i = (span + 1 + j - ORDER) as isize;
        let iu = i as usize;
        let mut val = 0.0;
        let denom = knots[iu + 3] - knots[iu];
        if denom > 0.0 {
            val += 3.0 * db3(i) / denom;
        }
        let denom = knots[iu + 4] - knots[iu + 1];
        if denom > 0.0 {
            val -= 3.0 * db3(i + 1) / denom;
        }
        *out = val;
    }
    (span, deriv2)
}

impl SplineFit {
    /// Fits a penalized cubic regression spline to `(xs, ys)` with evenly
    /// spaced knots (`n_interior` of them strictly inside the range) and a
    /// GCV-chosen second-derivative penalty.
    pub fn fit_gcv(xs: &[f64], ys: &[f64], n_interior: usize) -> Result<SplineFit> {
        let mut fits = fit_gcv_shared(xs, std::slice::from_ref(&ys.to_vec()), n_interior)?;
        Ok(fits.pop().expect("one fit per response"))
    }

    /// Spline value at `x` (clamped to the fitted interval).
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo, self.hi);
        let (span, vals) = basis_at(&self.knots, x);
        let mut acc = 0.0;
        for (j, &v) in vals.iter().enumerate() {
            acc += v * self.coeffs[span + 1 + j - ORDER];
        }
        acc
    }

    /// Spline derivative at `x` (clamped to the fitted interval).
    pub fn eval_deriv(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo, self.hi);
        let (span, vals) = basis_deriv_at(&self.knots, x);
        let mut acc = 0.0;
        for (j, &v) in vals.iter().enumerate() {
            acc += v * self.coeffs[span + 1 + j - ORDER];
        }
        acc
    }

    /// Fitted interval.
    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// Fits one spline per response column over a common abscissa, with a single
/// penalty weight chosen by the total GCV score.
///
/// Sharing the weight matters when the responses are coordinates of one
/// curve: smoothing is then the same linear operator on every coordinate, so
/// linear relations between coordinates (such as the AR/MA cancellation at
/// d = 0) survive smoothing exactly.
pub fn fit_gcv_shared(
    xs: &[f64],
    columns: &[Vec<f64>],
    n_interior: usize,
) -> Result<Vec<SplineFit>> {
    let n = xs.len();
    if n < 8 || columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("spline fit needs at least 8 equal-length points"));
    }
    if !xs.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::invalid("spline fit: xs must be increasing"));
    }
    let lo = xs[0];
    let hi = xs[n - 1];

    // Padded knot vector with ORDER-fold boundary knots.
    let spacing = (hi - lo) / (n_interior + 1) as f64;
    let mut knots = Vec::with_capacity(n_interior + 2 * ORDER);
    for _ in 0..ORDER {
        knots.push(lo);
    }
    for i in 1..=n_interior {
        knots.push(lo + spacing * i as f64);
    }
    for _ in 0..ORDER {
        knots.push(hi);
    }
    let n_basis = knots.len() - ORDER;

    // Design matrix, shared across responses.
    let mut b = DMatrix::<f64>::zeros(n, n_basis);
    for (row, &x) in xs.iter().enumerate() {
        let (span, vals) = basis_at(&knots, x);
        for (j, &v) in vals.iter().enumerate() {
            b[(row, span + 1 + j - ORDER)] = v;
        }
    }
    let bt_b = b.transpose() * &b;
    let bt_ys: Vec<DVector<f64>> = columns
        .iter()
        .map(|ys| b.transpose() * DVector::from_column_slice(ys))
        .collect();

    // Roughness penalty: second derivatives of cubics are piecewise linear,
    // so two-point Gauss-Legendre per knot span integrates their products
    // exactly.
    let mut pen = DMatrix::<f64>::zeros(n_basis, n_basis);
    let gauss = 1.0 / 3.0f64.sqrt();
    for span in (ORDER - 1)..(knots.len() - ORDER) {
        let (a, bnd) = (knots[span], knots[span + 1]);
        if bnd <= a {
            continue;
        }
        let mid = 0.5 * (a + bnd);
        let half = 0.5 * (bnd - a);
        for &gx in &[mid - half * gauss, mid + half * gauss] {
            let (sp, d2) = basis_deriv2_at(&knots, gx);
            debug_assert_eq!(sp, span);
            for j1 in 0..ORDER {
                for j2 in 0..ORDER {
                    pen[(sp + 1 + j1 - ORDER, sp + 1 + j2 - ORDER)] += half * d2[j1] * d2[j2];
                }
            }
        }
    }

    // GCV sweep over the common penalty weight.
    let mut best: Option<(f64, f64)> = None;
    for step in 0..LAMBDA_STEPS {
        let frac = step as f64 / (LAMBDA_STEPS - 1) as f64;
        let loglam = LOG_LAMBDA_RANGE.0 + frac * (LOG_LAMBDA_RANGE.1 - LOG_LAMBDA_RANGE.0);
        let lambda = 10f64.powf(loglam);
        let lhs = &bt_b + &pen * lambda;
        let Some(chol) = lhs.clone().cholesky() else {
            continue;
        };
        let mut rss = 0.0;
        for (ys, bt_y) in columns.iter().zip(&bt_ys) {
            let coeffs = chol.solve(bt_y);
            let fitted = &b * &coeffs;
            rss += ys
                .iter()
                .zip(fitted.iter())
                .map(|(y, f)| (y - f) * (y - f))
                .sum::<f64>();
        }
        // tr(S) = tr((B'B + λP)^{-1} B'B), the same for every response.
        let trace = chol.solve(&bt_b).trace();
        let denom = (n as f64 - trace).max(1e-6);
        let gcv = n as f64 * rss / (denom * denom);
        if best.is_none_or(|(g, _)| gcv < g) {
            best = Some((gcv, lambda));
        }
    }
    let (_, lambda) =
        best.ok_or_else(|| Error::Optim("GCV sweep found no solvable penalty".into()))?;
    let lhs = &bt_b + &pen * lambda;
    let chol = lhs
        .cholesky()
        .ok_or_else(|| Error::Optim("penalized normal equations not SPD".into()))?;
    Ok(bt_ys
        .iter()
        .map(|bt_y| SplineFit {
            knots: knots.clone(),
            coeffs: chol.solve(bt_y).as_slice().to_vec(),
            lo,
            hi,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn partition_of_unity() {
        let knots: Vec<f64> = vec![0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0];
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let (_, vals) = basis_at(&knots, x);
            let s: f64 = vals.iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reproduces_smooth_function() {
        let xs: Vec<f64> = (0..=150).map(|i| -0.5 + i as f64 * 0.01).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (2.0 * x).sin() + 0.3 * x * x).collect();
        let fit = SplineFit::fit_gcv(&xs, &ys, 40).unwrap();
        for (&x, &y) in xs.iter().zip(&ys) {
            assert_abs_diff_eq!(fit.eval(x), y, epsilon = 5e-4);
        }
    }

    #[test]
    fn smooths_noise_toward_trend() {
        // Deterministic pseudo-noise on a line; the spline should track the
        // line much more closely than the noisy samples do.
        let xs: Vec<f64> = (0..=120).map(|i| i as f64 * 0.01).collect();
        let noise = |i: usize| (((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5) * 0.02;
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, &x)| 2.0 * x + noise(i)).collect();
        let fit = SplineFit::fit_gcv(&xs, &ys, 30).unwrap();
        let max_err = xs
            .iter()
            .map(|&x| (fit.eval(x) - 2.0 * x).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 5e-3, "max deviation from trend {max_err}");
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (3.0 * x).cos()).collect();
        let fit = SplineFit::fit_gcv(&xs, &ys, 25).unwrap();
        let h = 1e-6;
        for &x in &[0.1, 0.37, 0.5, 0.82] {
            let fd = (fit.eval(x + h) - fit.eval(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(fit.eval_deriv(x), fd, epsilon = 1e-5);
        }
    }
}
