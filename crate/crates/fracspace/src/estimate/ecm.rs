//! One expectation-conditional-maximization iteration.
//!
//! The E step smooths at the current parameters and banks the moment sums.
//! The first CM step takes a Newton step on the expected complete-data
//! objective in the transition and loading parameters θ⁽¹⁾ = (d, λ, φ, γ),
//! exploiting that T and Z are close to linear in θ⁽¹⁾: with Ξ the system
//! Jacobian, the step solves
//!
//! ```text
//! θ⁽¹⁾ ← θ⁽¹⁾ + (Ξ'GΞ)⁻¹ Ξ'(g - G vec(T, Z)),
//! g = vec(W B, H⁻¹E),    G = diag(C' ⊗ W, F' ⊗ H⁻¹),
//! ```
//!
//! where W weights the state innovations. The Kronecker blocks are never
//! materialized; every entry of Ξ'GΞ is a pair of small trace products.
//! Steps are halved until the expected objective actually increases, which
//! (with the exact closed-form update of the free noise variances in the
//! second CM step) gives the generalized-EM ascent property the likelihood
//! monotonicity rests on. Shock correlations stay fixed here; the gradient
//! stage moves them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fc::{FCModel, ParamVector, SystemJacobian};
use crate::series::Series;
use crate::statespace::StateSpace;

use super::moments::{smoother_moments_structured, SmootherMoments};

/// Floor for the closed-form noise-variance update, keeping the next filter
/// pass away from an exactly singular innovation covariance.
const H_FLOOR: f64 = 1e-12;

/// Maximum number of step halvings before the Newton step is abandoned.
const MAX_HALVINGS: usize = 10;

/// Result of one ECM iteration.
#[derive(Debug, Clone)]
pub struct EmStep {
    /// Updated parameter vector.
    pub theta: ParamVector,
    /// Log likelihood at the input parameters, from the E-step filter pass.
    pub loglik: f64,
    /// Increase of the expected complete-data objective achieved by the
    /// accepted step (zero when every halving failed).
    pub q_gain: f64,
    /// Number of halvings before acceptance.
    pub halvings: usize,
}

/// Weight on the state-innovation moment in the complete-data likelihood,
/// W = R(R'R)⁻¹ Q⁻¹ (R'R)⁻¹ R'. For orthonormal selection columns this is
/// R Q⁻¹ R'; the general form also covers the rank-one shared-shock R.
pub(super) fn transition_weight(system: &StateSpace) -> Result<DMatrix<f64>> {
    let q_dim = system.shock_dim();
    let eye = DMatrix::identity(q_dim, q_dim);
    let rtr = system.r.transpose() * &system.r;
    let rtr_inv = rtr
        .cholesky()
        .ok_or_else(|| Error::parameter("shock loading matrix is rank deficient"))?
        .solve(&eye);
    let q_inv = system
        .q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::parameter("shock covariance is not positive definite"))?
        .solve(&eye);
    Ok(&system.r * &rtr_inv * q_inv * rtr_inv * system.r.transpose())
}

/// Gradients of the expected complete-data objective with respect to the
/// full T and Z matrices: ∂Q/∂T = W(B - TC) and ∂Q/∂Z = H⁻¹(E - ZF).
pub(super) fn system_gradients(
    system: &StateSpace,
    mom: &SmootherMoments,
    w: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let gt = w * (&mom.b - &system.t * &mom.c);
    let hinv_rows = DMatrix::from_fn(system.obs_dim(), system.obs_dim(), |i, j| {
        if i == j {
            1.0 / system.h[i]
        } else {
            0.0
        }
    });
    let gz = hinv_rows * (&mom.e - &system.z * &mom.f);
    (gt, gz)
}

/// Splits the columns of the system Jacobian back into per-parameter
/// derivative matrices (dT_i, dZ_i).
pub(super) fn jacobian_blocks(
    jac: &SystemJacobian,
    k: usize,
    p: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let n1 = jac.xi.ncols();
    let mut dts = Vec::with_capacity(n1);
    let mut dzs = Vec::with_capacity(n1);
    for i in 0..n1 {
        let col = jac.xi.column(i);
        dts.push(DMatrix::from_column_slice(k, k, &col.as_slice()[..k * k]));
        dzs.push(DMatrix::from_column_slice(p, k, &col.as_slice()[k * k..]));
    }
    (dts, dzs)
}

/// θ⁽¹⁾ gradient of the expected objective: entry i is
/// tr(dT_i' ∂Q/∂T) + tr(dZ_i' ∂Q/∂Z).
pub(super) fn theta1_gradient(
    dts: &[DMatrix<f64>],
    dzs: &[DMatrix<f64>],
    gt: &DMatrix<f64>,
    gz: &DMatrix<f64>,
) -> DVector<f64> {
    DVector::from_fn(dts.len(), |i, _| {
        dts[i].dot(gt) + dzs[i].dot(gz)
    })
}

/// Expected complete-data objective, up to terms constant within an ECM
/// iteration: the state-innovation and measurement quadratic forms plus the
/// θ-dependent part of the initial-state density (the stationary start of
/// the short-memory units).
fn q_objective(
    system: &StateSpace,
    phi: &[f64],
    mom: &SmootherMoments,
    w: &DMatrix<f64>,
    unit_offset: usize,
) -> f64 {
    let s_trans = &mom.a - &system.t * mom.b.transpose() - &mom.b * system.t.transpose()
        + &system.t * &mom.c * system.t.transpose();
    let s_obs = &mom.d - &system.z * mom.e.transpose() - &mom.e * system.z.transpose()
        + &system.z * &mom.f * system.z.transpose();
    let n = mom.n as f64;
    let mut q = -0.5 * w.dot(&s_trans);
    for i in 0..system.obs_dim() {
        q -= 0.5 * (n * system.h[i].ln() + s_obs[(i, i)] / system.h[i]);
    }
    for (i, &f) in phi.iter().enumerate() {
        let e1 = mom.e1[(unit_offset + i, unit_offset + i)];
        q += 0.5 * ((1.0 - f * f).ln() - (1.0 - f * f) * e1);
    }
    q
}

/// Runs one ECM iteration at `theta`.
pub fn ecm_iterate(model: &FCModel, theta: &ParamVector, data: &Series) -> Result<EmStep> {
    let spec = model.spec();
    let layout = model.layout();
    let structure = model.structure();
    let unit_offset = structure.u * structure.s;

    let system = model.assemble_system(theta)?;
    if system.h.iter().any(|&h| h <= 0.0) {
        return Err(Error::parameter(
            "the EM stage needs strictly positive noise variances",
        ));
    }
    let mom = smoother_moments_structured(&system, &structure, data)?;
    let w = transition_weight(&system)?;
    let phi = spec.phi_values(theta);
    let q_cur = q_objective(&system, &phi, &mom, &w, unit_offset);

    let n1 = layout.theta1_len();
    let mut new_theta = theta.clone();
    let mut accepted_system = system.clone();
    let mut q_gain = 0.0;
    let mut halvings = 0;
    if n1 > 0 {
        let jac = model.system_jacobian(theta)?;
        let k = model.state_dim();
        let p = spec.p;
        let (dts, dzs) = jacobian_blocks(&jac, k, p);
        let (gt, gz) = system_gradients(&system, &mom, &w);
        let grad = theta1_gradient(&dts, &dzs, &gt, &gz);

        // Ξ'GΞ through trace identities: entry (i, j) is
        // tr(dT_i' W dT_j C) + tr(dZ_i' H⁻¹ dZ_j F).
        let mut m = DMatrix::zeros(n1, n1);
        for j in 0..n1 {
            let wtc = &w * &dts[j] * &mom.c;
            let mut hdz = dzs[j].clone();
            for row in 0..p {
                for col in 0..k {
                    hdz[(row, col)] /= system.h[row];
                }
            }
            let hzf = hdz * &mom.f;
            for i in 0..n1 {
                m[(i, j)] = dts[i].dot(&wtc) + dzs[i].dot(&hzf);
            }
        }
        let direction = solve_newton(&m, &grad, model)?;

        let mut step = 1.0;
        loop {
            let mut trial = new_theta.clone();
            for (i, d) in direction.iter().enumerate() {
                trial.0[i] = theta.0[i] + step * d;
            }
            if let Ok(trial_system) = model.assemble_system(&trial) {
                let trial_phi = spec.phi_values(&trial);
                let q_trial = q_objective(&trial_system, &trial_phi, &mom, &w, unit_offset);
                if q_trial > q_cur {
                    q_gain = q_trial - q_cur;
                    new_theta = trial;
                    accepted_system = trial_system;
                    break;
                }
            }
            if halvings == MAX_HALVINGS {
                // No usable step; keep θ⁽¹⁾ and let the variance update and
                // the gradient stage make progress.
                break;
            }
            halvings += 1;
            step *= 0.5;
        }
    }

    // Second CM step: free noise variances in closed form, ĥ_i = L_ii / n,
    // with L evaluated at the updated loadings.
    let z_new = &accepted_system.z;
    let l_new = &mom.d - z_new * mom.e.transpose() - &mom.e * z_new.transpose()
        + z_new * &mom.f * z_new.transpose();
    let h_range = layout.h_range();
    let mut free_idx = h_range.start;
    for (i, entry) in spec.h.iter().enumerate() {
        if entry.is_free() {
            new_theta.0[free_idx] = (l_new[(i, i)] / mom.n as f64).max(H_FLOOR);
            free_idx += 1;
        }
    }

    Ok(EmStep {
        theta: new_theta,
        loglik: mom.loglik,
        q_gain,
        halvings,
    })
}

/// Solves the Newton system, reporting which parameters span the null space
/// when the curvature matrix is singular.
fn solve_newton(m: &DMatrix<f64>, grad: &DVector<f64>, model: &FCModel) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(grad));
    }
    let eig = m.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v));
    let tol = 1e-12 * max_eig.max(1.0);
    let names = model.spec().param_names();
    let mut flagged: Vec<String> = Vec::new();
    let mut inv_applied = DVector::zeros(grad.len());
    for j in 0..eig.eigenvalues.len() {
        let val = eig.eigenvalues[j];
        let vec = eig.eigenvectors.column(j);
        if val <= tol {
            let peak = vec.amax();
            for (i, v) in vec.iter().enumerate() {
                if v.abs() > 0.5 * peak && !flagged.contains(&names[i]) {
                    flagged.push(names[i].clone());
                }
            }
        } else {
            inv_applied += vec * (vec.dot(grad) / val);
        }
    }
    if !flagged.is_empty() {
        return Err(Error::RankDeficient(format!(
            "expected-objective curvature is singular in the direction of {}",
            flagged.join(", ")
        )));
    }
    Ok(inv_applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::ApproxSpec;
    use crate::fc::{FCModelSpec, MaskEntry, ShockCorrelation, ShortMemoryUnit};
    use crate::statespace::simulate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bivariate_model() -> FCModel {
        let spec = FCModelSpec {
            p: 2,
            s: 1,
            lambda: vec![vec![MaskEntry::Fixed(1.0)], vec![MaskEntry::Free]],
            d_groups: vec![0],
            units: vec![],
            correlation: ShockCorrelation::Identity,
            h: vec![MaskEntry::Free, MaskEntry::Free],
            approx: ApproxSpec::MaTruncation { m: 4 },
        };
        FCModel::new(spec, 200, None).unwrap()
    }

    fn unit_model() -> FCModel {
        let spec = FCModelSpec {
            p: 2,
            s: 1,
            lambda: vec![vec![MaskEntry::Fixed(1.0)], vec![MaskEntry::Free]],
            d_groups: vec![0],
            units: vec![ShortMemoryUnit {
                ar: MaskEntry::Free,
                gamma: vec![MaskEntry::Free, MaskEntry::Free],
            }],
            correlation: ShockCorrelation::Identity,
            h: vec![MaskEntry::Fixed(1e-6), MaskEntry::Fixed(1e-6)],
            approx: ApproxSpec::MaTruncation { m: 4 },
        };
        FCModel::new(spec, 200, None).unwrap()
    }

    #[test]
    fn em_steps_increase_the_likelihood() {
        let model = bivariate_model();
        let truth = ParamVector(vec![0.6, 0.8, 0.5, 0.7]);
        let system = model.assemble_system(&truth).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (data, _) = simulate(&system, 200, &mut rng).unwrap();

        let mut theta = ParamVector(vec![0.3, 1.2, 1.0, 1.0]);
        let mut last = f64::NEG_INFINITY;
        for _ in 0..25 {
            let step = ecm_iterate(&model, &theta, &data).unwrap();
            assert!(
                step.loglik >= last - 1e-10,
                "likelihood decreased: {last} -> {}",
                step.loglik
            );
            last = step.loglik;
            theta = step.theta;
        }
        // The walk should have moved d and the loading toward the truth.
        assert!((theta.0[0] - 0.6).abs() < 0.25, "d drifted to {}", theta.0[0]);
        assert!((theta.0[1] - 0.8).abs() < 0.4, "lambda drifted to {}", theta.0[1]);
    }

    #[test]
    fn em_with_short_memory_units_is_monotone() {
        let model = unit_model();
        let truth = ParamVector(vec![0.7, 0.9, 0.5, 0.8, -0.4]);
        let system = model.assemble_system(&truth).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (data, _) = simulate(&system, 150, &mut rng).unwrap();

        let mut theta = ParamVector(vec![0.4, 1.1, 0.2, 0.5, -0.2]);
        let mut last = f64::NEG_INFINITY;
        for _ in 0..20 {
            let step = ecm_iterate(&model, &theta, &data).unwrap();
            assert!(
                step.loglik >= last - 1e-10,
                "likelihood decreased: {last} -> {}",
                step.loglik
            );
            last = step.loglik;
            theta = step.theta;
        }
    }

    #[test]
    fn variance_update_matches_residual_moment() {
        let model = bivariate_model();
        let theta = ParamVector(vec![0.5, 0.9, 0.8, 0.6]);
        let system = model.assemble_system(&theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (data, _) = simulate(&system, 120, &mut rng).unwrap();

        let step = ecm_iterate(&model, &theta, &data).unwrap();
        // Recompute the closed form from the moments at the accepted
        // loadings and check the packed vector picked it up.
        let structure = model.structure();
        let mom = smoother_moments_structured(&system, &structure, &data).unwrap();
        let accepted = model.assemble_system(&step.theta).unwrap();
        let l = &mom.d - &accepted.z * mom.e.transpose() - &mom.e * accepted.z.transpose()
            + &accepted.z * &mom.f * accepted.z.transpose();
        let h_start = model.layout().h_range().start;
        for i in 0..2 {
            let expect = l[(i, i)] / mom.n as f64;
            assert!(
                (step.theta.0[h_start + i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()),
                "h_{i} update {} != {}",
                step.theta.0[h_start + i],
                expect
            );
        }
    }
}
