//! System matrices and stationary initialization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A linear Gaussian state space model in future form. Measurement noise is
/// diagonal, stored as the vector of variances.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    /// Measurement loadings, p x k.
    pub z: DMatrix<f64>,
    /// Measurement noise variances, length p.
    pub h: DVector<f64>,
    /// State transition, k x k.
    pub t: DMatrix<f64>,
    /// Shock loadings, k x q.
    pub r: DMatrix<f64>,
    /// Shock covariance, q x q.
    pub q: DMatrix<f64>,
    /// Initial state mean, length k.
    pub a1: DVector<f64>,
    /// Initial state covariance, k x k.
    pub p1: DMatrix<f64>,
}

impl StateSpace {
    /// Validates dimensions and symmetry; covariance positive semidefiniteness
    /// is left to the filter, which reports the first failing step.
    pub fn new(
        z: DMatrix<f64>,
        h: DVector<f64>,
        t: DMatrix<f64>,
        r: DMatrix<f64>,
        q: DMatrix<f64>,
        a1: DVector<f64>,
        p1: DMatrix<f64>,
    ) -> Result<StateSpace> {
        let (p, k) = z.shape();
        if p == 0 || k == 0 {
            return Err(Error::invalid("state space needs p >= 1 and k >= 1"));
        }
        if h.len() != p {
            return Err(Error::invalid("h must have one variance per observable"));
        }
        if h.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("measurement variances must be nonnegative"));
        }
        if t.shape() != (k, k) {
            return Err(Error::invalid("T must be k x k"));
        }
        let q_dim = q.nrows();
        if q.shape() != (q_dim, q_dim) || r.shape() != (k, q_dim) {
            return Err(Error::invalid("R must be k x q and Q must be q x q"));
        }
        if a1.len() != k || p1.shape() != (k, k) {
            return Err(Error::invalid("initial moments must match the state dimension"));
        }
        for (name, m) in [("Q", &q), ("P1", &p1)] {
            let asym = (m - m.transpose()).norm();
            if asym > 1e-8 * (1.0 + m.norm()) {
                return Err(Error::invalid(format!("{name} must be symmetric")));
            }
        }
        Ok(StateSpace {
            z,
            h,
            t,
            r,
            q,
            a1,
            p1,
        })
    }

    /// Observation dimension p.
    pub fn obs_dim(&self) -> usize {
        self.z.nrows()
    }

    /// State dimension k.
    pub fn state_dim(&self) -> usize {
        self.z.ncols()
    }

    /// Shock dimension q.
    pub fn shock_dim(&self) -> usize {
        self.q.nrows()
    }

    /// The state innovation covariance R Q R'.
    pub fn rqr(&self) -> DMatrix<f64> {
        &self.r * &self.q * self.r.transpose()
    }
}

/// Solves the discrete Lyapunov equation `P = T P T' + S` for a stable `T`
/// by the doubling iteration
///
/// ```text
/// S_{j+1} = S_j + A_j S_j A_j',   A_{j+1} = A_j A_j,   A_0 = T, S_0 = S,
/// ```
///
/// which squares the spectral radius each step and so converges in a few
/// dozen iterations for any stable transition.
pub fn stationary_covariance(t: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = t.nrows();
    if t.ncols() != k || s.shape() != (k, k) {
        return Err(Error::invalid("stationary_covariance: square matrices of equal size"));
    }
    let mut a = t.clone();
    let mut acc = s.clone();
    for _ in 0..200 {
        let a_norm = a.norm();
        if a_norm < 1e-150 {
            // Symmetrize away the accumulation roundoff.
            let sym = (&acc + acc.transpose()) * 0.5;
            return Ok(sym);
        }
        if !a_norm.is_finite() || acc.norm() > 1e100 {
            break;
        }
        acc = &acc + &a * &acc * a.transpose();
        a = &a * &a;
    }
    Err(Error::parameter(
        "stationary_covariance: transition is not stable",
    ))
}

/// Symmetric positive semidefinite square root, used to draw from possibly
/// singular covariances. Small negative eigenvalues from roundoff are
/// clamped to zero; genuinely indefinite inputs are rejected.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let tol = 1e-10 * (1.0 + max_eig);
    let mut scaled = eig.eigenvectors.clone();
    for (j, &val) in eig.eigenvalues.iter().enumerate() {
        if val < -tol {
            return Err(Error::parameter(format!(
                "covariance has negative eigenvalue {val:.3e}"
            )));
        }
        let root = val.max(0.0).sqrt();
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= root;
        }
    }
    Ok(scaled)
}
