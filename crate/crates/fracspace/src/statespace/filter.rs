//! Kalman filter.

use nalgebra::{DMatrix, DVector};

use super::model::StateSpace;
use crate::error::{Error, Result};
use crate::series::Series;

/// Condition number bound on the innovation covariance; beyond this the
/// filter reports failure rather than returning garbage likelihoods.
const MAX_F_CONDITION: f64 = 1e12;

/// One-step predictions and likelihood from a filter pass.
///
/// Indexing: `a[t]` and `p[t]` are the moments of `α_{t+1}` given data
/// through time t+0, so `a[0]` is the initial mean and the vectors have
/// length n+1 with the last entry predicting the state one step past the
/// sample. `v[t]`, `finv[t]`, and `gain[t]` belong to observation t.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Gaussian log likelihood of the sample.
    pub loglik: f64,
    /// Predicted state means a_t, length n+1.
    pub a: Vec<DVector<f64>>,
    /// Predicted state covariances P_t, length n+1.
    pub p: Vec<DMatrix<f64>>,
    /// Innovations v_t = y_t - Z a_t.
    pub v: Vec<DVector<f64>>,
    /// Inverted innovation covariances F_t^{-1}.
    pub finv: Vec<DMatrix<f64>>,
    /// Kalman gains K_t = T P_t Z' F_t^{-1}.
    pub gain: Vec<DMatrix<f64>>,
}

impl FilterOutput {
    /// L_t = T - K_t Z, the closed-loop transition at time t.
    pub fn closed_loop(&self, model: &StateSpace, t: usize) -> DMatrix<f64> {
        &model.t - &self.gain[t] * &model.z
    }
}

/// Inverts the innovation covariance and returns its log determinant,
/// preferring Cholesky and falling back to a symmetric eigendecomposition
/// when the matrix is on the edge of positive definiteness.
pub(crate) fn invert_innovation(f: &DMatrix<f64>, t: usize) -> Result<(DMatrix<f64>, f64)> {
    if let Some(chol) = f.clone().cholesky() {
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.solve(&DMatrix::identity(f.nrows(), f.nrows()));
        return Ok((inv, logdet));
    }
    let sym = (f + f.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if !(max_eig > 0.0) || min_eig <= max_eig / MAX_F_CONDITION {
        return Err(Error::Filter {
            t,
            reason: format!(
                "innovation covariance is singular (eigenvalues in [{min_eig:.3e}, {max_eig:.3e}])"
            ),
        });
    }
    let mut inv = DMatrix::zeros(f.nrows(), f.nrows());
    let mut logdet = 0.0;
    for (j, &val) in eig.eigenvalues.iter().enumerate() {
        logdet += val.ln();
        let col = eig.eigenvectors.column(j);
        inv += col * col.transpose() / val;
    }
    Ok((inv, logdet))
}

/// Runs the Kalman filter over `data`, which must have one column per
/// observable of `model`.
pub fn kalman_filter(model: &StateSpace, data: &Series) -> Result<FilterOutput> {
    let p_dim = model.obs_dim();
    let n = data.len();
    if data.ncols() != p_dim {
        return Err(Error::invalid(format!(
            "filter: data has {} columns, model expects {p_dim}",
            data.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("filter: empty sample"));
    }

    let rqr = model.rqr();
    let h_diag = DMatrix::from_diagonal(&model.h);
    let mut a = Vec::with_capacity(n + 1);
    let mut p = Vec::with_capacity(n + 1);
    let mut v_all = Vec::with_capacity(n);
    let mut finv_all = Vec::with_capacity(n);
    let mut gain_all = Vec::with_capacity(n);
    a.push(model.a1.clone());
    p.push(model.p1.clone());

    let mut loglik = -0.5 * (n * p_dim) as f64 * (2.0 * std::f64::consts::PI).ln();
    for t in 0..n {
        let a_t = &a[t];
        let p_t = &p[t];
        let y_t = DVector::from_row_slice(data.row(t));

        let pzt = p_t * model.z.transpose();
        let f = &model.z * &pzt + &h_diag;
        let (finv, logdet) = invert_innovation(&f, t)?;
        let v = y_t - &model.z * a_t;

        loglik -= 0.5 * (logdet + (v.transpose() * &finv * &v)[(0, 0)]);

        let gain = &model.t * &pzt * &finv;
        let l = &model.t - &gain * &model.z;
        let a_next = &model.t * a_t + &gain * &v;
        let mut p_next = &model.t * p_t * l.transpose() + &rqr;
        p_next = (&p_next + p_next.transpose()) * 0.5;

        a.push(a_next);
        p.push(p_next);
        v_all.push(v);
        finv_all.push(finv);
        gain_all.push(gain);
    }

    if !loglik.is_finite() {
        return Err(Error::Filter {
            t: n,
            reason: "log likelihood is not finite".into(),
        });
    }
    Ok(FilterOutput {
        loglik,
        a,
        p,
        v: v_all,
        finv: finv_all,
        gain: gain_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// AR(1) plus noise, where the scalar recursions are easy to hand-roll.
    fn ar1_model(phi: f64, q: f64, h: f64) -> StateSpace {
        StateSpace::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, h),
            DMatrix::from_element(1, 1, phi),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, q),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, q / (1.0 - phi * phi)),
        )
        .unwrap()
    }

    #[test]
    fn matches_scalar_recursion() {
        let (phi, q, h) = (0.8, 0.5, 0.3);
        let model = ar1_model(phi, q, h);
        let ys = [1.0, -0.3, 0.7, 0.2, -1.1];
        let data = Series::from_column(ys.to_vec()).unwrap();
        let out = kalman_filter(&model, &data).unwrap();

        let mut a = 0.0;
        let mut p = q / (1.0 - phi * phi);
        let mut loglik = 0.0;
        for (t, &y) in ys.iter().enumerate() {
            let f = p + h;
            let v = y - a;
            loglik += -0.5 * ((2.0 * std::f64::consts::PI).ln() + f.ln() + v * v / f);
            assert_abs_diff_eq!(out.v[t][0], v, epsilon = 1e-12);
            assert_abs_diff_eq!(out.finv[t][(0, 0)], 1.0 / f, epsilon = 1e-12);
            let k = phi * p / f;
            a = phi * a + k * v;
            p = phi * p * (phi - k) + q;
            assert_abs_diff_eq!(out.a[t + 1][0], a, epsilon = 1e-12);
            assert_abs_diff_eq!(out.p[t + 1][(0, 0)], p, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(out.loglik, loglik, epsilon = 1e-10);
    }

    #[test]
    fn reports_singular_innovation() {
        // No measurement noise and a zero initial variance: F_1 = 0.
        let model = StateSpace::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap();
        let data = Series::from_column(vec![0.3, 0.1]).unwrap();
        match kalman_filter(&model, &data) {
            Err(Error::Filter { t, .. }) => assert_eq!(t, 0),
            other => panic!("expected filter failure, got {other:?}"),
        }
    }

    #[test]
    fn column_count_mismatch_is_rejected() {
        let model = ar1_model(0.5, 1.0, 0.1);
        let data = Series::from_columns(
            vec!["a".into(), "b".into()],
            &[vec![0.1, 0.3], vec![0.2, 0.4]],
        )
        .unwrap();
        assert!(kalman_filter(&model, &data).is_err());
    }
}
