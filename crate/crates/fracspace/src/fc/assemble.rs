//! Assembly of the state-space system matrices from a parameter vector.

use nalgebra::{DMatrix, DVector};

use super::spec::{ParamVector, ShockCorrelation};
use super::FCModel;
use crate::arma::Coeffs;
use crate::error::{Error, Result};
use crate::statespace::StateSpace;

impl FCModel {
    /// Builds the state-space system at `theta`.
    ///
    /// The state stacks u lags of the transformed fractional process μ_t
    /// followed by the short-memory units. The fractional transition is the
    /// (us)×(us) companion of the approximating AR coefficients, with
    /// A_j = diag(â_j(d_1), …, â_j(d_s)):
    ///
    /// ```text
    /// T =  [ A_1  A_2 … A_u |    ]      Z = [ Λ  ΛM_1 … ΛM_{u-1}  Γ ],
    ///      [  I          0  |    ]
    ///      [      ⋱         |    ]
    ///      [       I     0  |    ]
    ///      [ ---------------+----]
    ///      [                | Φ  ]
    /// ```
    ///
    /// where M_j = diag(m̂_j(d_1), …, m̂_j(d_s)) and Φ = diag(φ). Shocks are
    /// standardized; the fractional block of Q is the identity, the shock
    /// correlation matrix, or a single shared column depending on the spec.
    /// Initialization is deterministic for the fractional part, a1 = 0 with
    /// Var(α₁⁽¹⁾) = R⁽¹⁾Q⁽¹,¹⁾R⁽¹⁾′, and stationary for the units.
    pub fn assemble_system(&self, theta: &ParamVector) -> Result<StateSpace> {
        let spec = self.spec();
        let layout = self.layout();
        if theta.len() != layout.total_len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, the layout needs {}",
                theta.len(),
                layout.total_len()
            )));
        }

        let (_, w) = self.orders();
        let u = self.u();
        let s = spec.s;
        let p = spec.p;
        let n_units = spec.units.len();
        let k = u * s + n_units;

        let coeffs = self.component_coeffs(theta)?;
        let lambda = spec.lambda_matrix(theta);
        let phi = spec.phi_values(theta);
        let gamma = spec.gamma_matrix(theta);
        let h = spec.h_vector(theta);

        for (i, &f) in phi.iter().enumerate() {
            if !(f.abs() < 1.0) {
                return Err(Error::parameter(format!(
                    "short-memory AR coefficient phi_{} = {f} is not stable",
                    i + 1
                )));
            }
        }
        for (i, &hv) in h.iter().enumerate() {
            if !(hv >= 0.0) {
                return Err(Error::parameter(format!(
                    "noise variance h_{} = {hv} is negative",
                    i + 1
                )));
            }
        }

        let mut t = DMatrix::zeros(k, k);
        for lag in 0..u {
            for j in 0..s {
                t[(j, lag * s + j)] = coeffs[j].ar.get(lag).copied().unwrap_or(0.0);
            }
        }
        for lag in 1..u {
            for j in 0..s {
                t[(lag * s + j, (lag - 1) * s + j)] = 1.0;
            }
        }
        for (i, &f) in phi.iter().enumerate() {
            t[(u * s + i, u * s + i)] = f;
        }

        let q_frac = match spec.correlation {
            ShockCorrelation::Singular => 1,
            _ => s,
        };
        let q_dim = q_frac + n_units;
        let mut r = DMatrix::zeros(k, q_dim);
        if spec.correlation == ShockCorrelation::Singular {
            for j in 0..s {
                r[(j, 0)] = 1.0;
            }
        } else {
            for j in 0..s {
                r[(j, j)] = 1.0;
            }
        }
        for i in 0..n_units {
            r[(u * s + i, q_frac + i)] = 1.0;
        }

        let mut q = DMatrix::identity(q_dim, q_dim);
        if spec.correlation == ShockCorrelation::Free {
            let corr = spec.correlation_matrix(theta);
            if corr.clone().cholesky().is_none() {
                return Err(Error::parameter(
                    "shock correlation matrix is not positive definite",
                ));
            }
            q.view_mut((0, 0), (s, s)).copy_from(&corr);
        }

        let mut z = DMatrix::zeros(p, k);
        for lag in 0..u {
            for j in 0..s {
                let m = if lag == 0 {
                    1.0
                } else if lag - 1 < w {
                    coeffs[j].ma[lag - 1]
                } else {
                    0.0
                };
                if m != 0.0 {
                    for i in 0..p {
                        z[(i, lag * s + j)] = lambda[(i, j)] * m;
                    }
                }
            }
        }
        for un in 0..n_units {
            for i in 0..p {
                z[(i, u * s + un)] = gamma[(i, un)];
            }
        }

        let a1 = DVector::zeros(k);
        let mut p1 = DMatrix::zeros(k, k);
        // Fixed zero start for the fractional lags: with α₀⁽¹⁾ = 0, the first
        // state is pure shock, so only the head block of P1 is nonzero.
        let rqr = &r * &q * r.transpose();
        p1.view_mut((0, 0), (s, s))
            .copy_from(&rqr.view((0, 0), (s, s)));
        for (i, &f) in phi.iter().enumerate() {
            p1[(u * s + i, u * s + i)] = 1.0 / (1.0 - f * f);
        }

        StateSpace::new(z, h, t, r, q, a1, p1)
    }

    /// Approximating coefficients of each fractional component at its
    /// memory order under `theta`.
    pub(super) fn component_coeffs(&self, theta: &ParamVector) -> Result<Vec<Coeffs>> {
        self.spec()
            .d_values(theta)
            .into_iter()
            .map(|d| self.source().coeffs(d))
            .collect()
    }
}
