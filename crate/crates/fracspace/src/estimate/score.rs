//! Analytic score of the exact likelihood.
//!
//! At the expansion point the gradient of the expected complete-data
//! objective equals the gradient of the likelihood itself, so one smoothing
//! pass prices the whole score: the θ⁽¹⁾ block is the system Jacobian
//! contracted with ∂Q/∂T = W(B - TC) and ∂Q/∂Z = H⁻¹(E - ZF), free noise
//! variances read off the smoothed measurement moment, and free unit AR
//! coefficients pick up the initial-state correction from their stationary
//! start. Shock correlations, which also move the initial covariance in a
//! way the moment identity does not cover cheaply, are differenced
//! numerically against the exact likelihood instead.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fc::{FCModel, ParamVector};
use crate::series::Series;

use super::ecm::{jacobian_blocks, system_gradients, theta1_gradient, transition_weight};
use super::moments::smoother_moments_structured;
use super::structured::filter_structured;

/// Relative step for the correlation finite differences.
const FD_STEP: f64 = 1e-5;

/// Score of the log likelihood at `theta`, in the packed parameter order.
pub fn score(model: &FCModel, theta: &ParamVector, data: &Series) -> Result<DVector<f64>> {
    let spec = model.spec();
    let layout = model.layout();
    let structure = model.structure();
    let system = model.assemble_system(theta)?;
    if system.h.iter().any(|&h| h <= 0.0) {
        return Err(Error::parameter(
            "the analytic score needs strictly positive noise variances",
        ));
    }
    let mom = smoother_moments_structured(&system, &structure, data)?;
    let w = transition_weight(&system)?;
    let mut out = DVector::zeros(layout.total_len());

    let n1 = layout.theta1_len();
    if n1 > 0 {
        let jac = model.system_jacobian(theta)?;
        let (dts, dzs) = jacobian_blocks(&jac, model.state_dim(), spec.p);
        let (gt, gz) = system_gradients(&system, &mom, &w);
        let g1 = theta1_gradient(&dts, &dzs, &gt, &gz);
        out.rows_mut(0, n1).copy_from(&g1);
    }

    // Stationary-start correction for free unit AR coefficients: the
    // initial variance 1/(1-φ²) moves with φ.
    let us = structure.u * structure.s;
    let phi_all = spec.phi_values(theta);
    let mut slot = layout.phi_range().start;
    for (unit_idx, unit) in spec.units.iter().enumerate() {
        if unit.ar.is_free() {
            let f = phi_all[unit_idx];
            let e1 = mom.e1[(us + unit_idx, us + unit_idx)];
            out[slot] += -f / (1.0 - f * f) + e1 * f;
            slot += 1;
        }
    }

    for idx in layout.corr_range() {
        out[idx] = fd_loglik_derivative(model, theta, idx, data)?;
    }

    let n = mom.n as f64;
    let mut slot = layout.h_range().start;
    for (i, entry) in spec.h.iter().enumerate() {
        if entry.is_free() {
            let h = system.h[i];
            out[slot] = -0.5 * n / h + 0.5 * mom.l[(i, i)] / (h * h);
            slot += 1;
        }
    }

    Ok(out)
}

/// Central difference of the exact likelihood in one coordinate, falling
/// back to a one-sided difference when a perturbation leaves the feasible
/// set (a correlation matrix on the edge of positive definiteness).
fn fd_loglik_derivative(
    model: &FCModel,
    theta: &ParamVector,
    idx: usize,
    data: &Series,
) -> Result<f64> {
    let structure = model.structure();
    let eval = |v: f64| -> Result<f64> {
        let mut th = theta.clone();
        th.0[idx] = v;
        let system = model.assemble_system(&th)?;
        Ok(filter_structured(&system, &structure, data)?.loglik)
    };
    let base = theta.0[idx];
    let h = FD_STEP * (1.0 + base.abs());
    match (eval(base + h), eval(base - h)) {
        (Ok(up), Ok(dn)) => Ok((up - dn) / (2.0 * h)),
        (Ok(up), Err(_)) => Ok((up - eval(base)?) / h),
        (Err(_), Ok(dn)) => Ok((eval(base)? - dn) / h),
        (Err(e), Err(_)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::ApproxSpec;
    use crate::fc::{FCModelSpec, MaskEntry, ShockCorrelation, ShortMemoryUnit};
    use crate::statespace::{kalman_filter, simulate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_against_fd(model: &FCModel, theta: &ParamVector, data: &Series) {
        let analytic = score(model, theta, data).unwrap();
        let scale = 1.0 + analytic.amax();
        for i in 0..theta.len() {
            let h = 1e-5 * (1.0 + theta.0[i].abs());
            let mut up = theta.clone();
            up.0[i] += h;
            let mut dn = theta.clone();
            dn.0[i] -= h;
            let lu = kalman_filter(&model.assemble_system(&up).unwrap(), data)
                .unwrap()
                .loglik;
            let ld = kalman_filter(&model.assemble_system(&dn).unwrap(), data)
                .unwrap()
                .loglik;
            let fd = (lu - ld) / (2.0 * h);
            assert!(
                (analytic[i] - fd).abs() <= 1e-4 * scale.max(fd.abs()),
                "entry {i}: analytic {} vs finite difference {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        // All parameter kinds except correlations: d, a loading, a unit AR
        // coefficient, its loadings, and both noise variances.
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
            h: vec![MaskEntry::Free, MaskEntry::Free],
            approx: ApproxSpec::MaTruncation { m: 4 },
        };
        let model = FCModel::new(spec, 150, None).unwrap();
        let truth = ParamVector(vec![0.6, 0.9, 0.5, 0.7, -0.4, 0.8, 1.1]);
        let system = model.assemble_system(&truth).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (data, _) = simulate(&system, 150, &mut rng).unwrap();

        for theta in [
            truth.clone(),
            ParamVector(vec![0.4, 1.2, 0.3, 0.5, -0.2, 1.0, 0.9]),
            ParamVector(vec![0.75, 0.7, 0.6, 0.9, -0.5, 0.6, 1.3]),
        ] {
            check_against_fd(&model, &theta, &data);
        }
    }

    #[test]
    fn score_covers_free_correlations() {
        let spec = FCModelSpec {
            p: 2,
            s: 2,
            lambda: vec![
                vec![MaskEntry::Fixed(1.0), MaskEntry::Free],
                vec![MaskEntry::Free, MaskEntry::Fixed(1.0)],
            ],
            d_groups: vec![0, 1],
            units: vec![],
            correlation: ShockCorrelation::Free,
            h: vec![MaskEntry::Free, MaskEntry::Free],
            approx: ApproxSpec::MaTruncation { m: 3 },
        };
        let model = FCModel::new(spec, 120, None).unwrap();
        let truth = ParamVector(vec![0.7, 0.3, 0.4, -0.3, 0.5, 0.8, 0.9]);
        let system = model.assemble_system(&truth).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (data, _) = simulate(&system, 120, &mut rng).unwrap();

        check_against_fd(&model, &truth, &data);
    }
}
