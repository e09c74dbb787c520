//! Fixed-interval state smoother.

use nalgebra::{DMatrix, DVector};

use super::filter::{kalman_filter, FilterOutput};
use super::model::StateSpace;
use crate::error::Result;
use crate::series::Series;

/// Full-sample state moments from one smoothing pass.
#[derive(Debug, Clone)]
pub struct SmoothOutput {
    /// The filter pass the smoother was built on.
    pub filter: FilterOutput,
    /// Smoothed state means E[α_t | y_1..y_n], length n.
    pub alpha: Vec<DVector<f64>>,
    /// Smoothed state variances Var[α_t | y_1..y_n], length n.
    pub cov: Vec<DMatrix<f64>>,
    /// Lag-one covariances Cov[α_t, α_{t-1} | y_1..y_n] for t = 2..n, so
    /// entry `i` pairs states i+2 and i+1 (1-based times).
    pub lag_cov: Vec<DMatrix<f64>>,
    /// Backward recursion states N_{t-1} for t = 1..n (entry t-1 holds
    /// N_{t-1}); the EM moment accumulation reuses them.
    pub n_mat: Vec<DMatrix<f64>>,
}

/// Runs the filter and the backward smoothing recursions
///
/// ```text
/// r_{t-1} = Z' F_t^{-1} v_t + L_t' r_t,      N_{t-1} = Z' F_t^{-1} Z + L_t' N_t L_t,
/// α̂_t = a_t + P_t r_{t-1},                   V_t = P_t - P_t N_{t-1} P_t,
/// ```
///
/// with `L_t = T - K_t Z`, plus the lag-one covariances
/// `Cov(α_t, α_{t-1} | Y) = (I - P_t N_{t-1}) L_{t-1} P_{t-1}`.
pub fn kalman_smooth(model: &StateSpace, data: &Series) -> Result<SmoothOutput> {
    let filter = kalman_filter(model, data)?;
    let n = data.len();
    let k = model.state_dim();

    let mut alpha = vec![DVector::zeros(k); n];
    let mut cov = vec![DMatrix::zeros(k, k); n];
    let mut n_mat = vec![DMatrix::zeros(k, k); n];

    let mut r = DVector::zeros(k);
    let mut n_cur = DMatrix::<f64>::zeros(k, k);
    for t in (0..n).rev() {
        let l = filter.closed_loop(model, t);
        let zf = model.z.transpose() * &filter.finv[t];
        r = &zf * &filter.v[t] + l.transpose() * &r;
        n_cur = &zf * &model.z + l.transpose() * &n_cur * &l;
        n_cur = (&n_cur + n_cur.transpose()) * 0.5;

        let p_t = &filter.p[t];
        alpha[t] = &filter.a[t] + p_t * &r;
        let mut v_t = p_t - p_t * &n_cur * p_t;
        v_t = (&v_t + v_t.transpose()) * 0.5;
        cov[t] = v_t;
        n_mat[t] = n_cur.clone();
    }

    // n_mat[t] holds N_{t-1} in the 1-based indexing of the recursion, which
    // is exactly the factor the lag-one formula needs at time t.
    let mut lag_cov = Vec::with_capacity(n.saturating_sub(1));
    let eye = DMatrix::<f64>::identity(k, k);
    for t in 1..n {
        let l_prev = filter.closed_loop(model, t - 1);
        let cov_t = (&eye - &filter.p[t] * &n_mat[t]) * l_prev * &filter.p[t - 1];
        lag_cov.push(cov_t);
    }

    Ok(SmoothOutput {
        filter,
        alpha,
        cov,
        lag_cov,
        n_mat,
    })
}
