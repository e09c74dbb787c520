//! Linearization of the system matrices in the structural parameters.

use nalgebra::{DMatrix, DVector};

use super::spec::ParamVector;
use super::FCModel;
use crate::error::Result;
use crate::statespace::StateSpace;

/// First-order expansion vec(T, Z) ≈ Xi·θ⁽¹⁾ + offset around a parameter
/// point, the ingredients of the conditional Newton step. vec(T) is stacked
/// above vec(Z), both column-major.
#[derive(Debug, Clone)]
pub struct SystemJacobian {
    /// ∂ vec(T, Z) / ∂ θ⁽¹⁾′, one column per structural parameter.
    pub xi: DMatrix<f64>,
    /// vec(T, Z) − Xi·θ⁽¹⁾ at the expansion point.
    pub offset: DVector<f64>,
}

impl FCModel {
    /// Differentiates the assembled system in θ⁽¹⁾. The memory-order columns
    /// use the analytic coefficient derivatives of the bound source; the
    /// remaining structural parameters enter T and Z linearly and are
    /// differenced centrally, which recovers their sparse patterns up to
    /// roundoff.
    pub fn system_jacobian(&self, theta: &ParamVector) -> Result<SystemJacobian> {
        let base = self.assemble_system(theta)?;
        let spec = self.spec();
        let layout = self.layout();
        let n1 = layout.theta1_len();
        let k = base.state_dim();
        let p = base.obs_dim();
        let (_, w) = self.orders();
        let u = self.u();
        let s = spec.s;

        let mut xi = DMatrix::zeros(k * k + p * k, n1);

        let lambda = spec.lambda_matrix(theta);
        for (j, &d) in spec.d_values(theta).iter().enumerate() {
            let slot = spec.d_groups[j];
            let derivs = self.source().coeffs_with_deriv(d)?;
            let mut col = xi.column_mut(slot);
            // T entries: row j of the companion block row holds â_lag.
            for lag in 0..u {
                let dar = derivs.dar.get(lag).copied().unwrap_or(0.0);
                col[(lag * s + j) * k + j] += dar;
            }
            // Z entries: column lag·s+j of Z holds Λ_{·j}·m̂_lag.
            for lag in 1..u {
                if lag - 1 >= w {
                    break;
                }
                let dma = derivs.dma[lag - 1];
                for i in 0..p {
                    col[k * k + (lag * s + j) * p + i] += lambda[(i, j)] * dma;
                }
            }
        }

        for idx in layout.n_d..n1 {
            let step = 1e-6 * (1.0 + theta.0[idx].abs());
            let mut plus = theta.clone();
            plus.0[idx] += step;
            let mut minus = theta.clone();
            minus.0[idx] -= step;
            let f_plus = vec_tz(&self.assemble_system(&plus)?);
            let f_minus = vec_tz(&self.assemble_system(&minus)?);
            xi.column_mut(idx)
                .copy_from(&((f_plus - f_minus) / (2.0 * step)));
        }

        let theta1 = DVector::from_column_slice(&theta.0[..n1]);
        let offset = vec_tz(&base) - &xi * theta1;
        Ok(SystemJacobian { xi, offset })
    }
}

/// Stacks vec(T) over vec(Z), column-major.
pub(super) fn vec_tz(system: &StateSpace) -> DVector<f64> {
    let k = system.state_dim();
    let p = system.obs_dim();
    let mut out = Vec::with_capacity(k * k + p * k);
    out.extend_from_slice(system.t.as_slice());
    out.extend_from_slice(system.z.as_slice());
    DVector::from_vec(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::{build_table, ApproxSpec, ApproxTable};
    use crate::fc::{FCModelSpec, MaskEntry, ShortMemoryUnit};
    use std::sync::OnceLock;

    fn small_table() -> &'static ApproxTable {
        static TABLE: OnceLock<ApproxTable> = OnceLock::new();
        TABLE.get_or_init(|| build_table(60, 1, 1, 0.05).expect("table builds"))
    }

    fn spec_with_unit(approx: ApproxSpec) -> FCModelSpec {
        FCModelSpec {
            p: 2,
            s: 1,
            lambda: vec![vec![MaskEntry::Free], vec![MaskEntry::Free]],
            d_groups: vec![0],
            units: vec![ShortMemoryUnit {
                ar: MaskEntry::Free,
                gamma: vec![MaskEntry::Free, MaskEntry::Free],
            }],
            correlation: crate::fc::ShockCorrelation::Identity,
            h: vec![MaskEntry::Free, MaskEntry::Free],
            approx,
        }
    }

    #[test]
    fn linearization_reproduces_system_at_expansion_point() {
        let model = FCModel::with_source(
            spec_with_unit(ApproxSpec::Arma { v: 1, w: 1 }),
            Box::new(small_table().clone()),
        )
        .unwrap();
        // Layout: d, lambda_1_1, lambda_2_1, phi_1, gamma_1_1, gamma_2_1, h_1, h_2.
        let theta = ParamVector(vec![0.7, 1.0, 0.8, 0.5, 0.6, -0.4, 1.0, 1.0]);
        let jac = model.system_jacobian(&theta).unwrap();
        let n1 = model.layout().theta1_len();
        let theta1 = DVector::from_column_slice(&theta.0[..n1]);
        let reconstructed = &jac.xi * theta1 + &jac.offset;
        let direct = vec_tz(&model.assemble_system(&theta).unwrap());
        assert!((reconstructed - direct).norm() < 1e-12);
    }

    #[test]
    fn d_column_matches_finite_differences() {
        let model = FCModel::with_source(
            spec_with_unit(ApproxSpec::Arma { v: 1, w: 1 }),
            Box::new(small_table().clone()),
        )
        .unwrap();
        let theta = ParamVector(vec![0.45, 1.2, 0.8, 0.3, 0.6, -0.4, 1.0, 1.0]);
        let jac = model.system_jacobian(&theta).unwrap();

        let step = 1e-5;
        let mut plus = theta.clone();
        plus.0[0] += step;
        let mut minus = theta.clone();
        minus.0[0] -= step;
        let fd = (vec_tz(&model.assemble_system(&plus).unwrap())
            - vec_tz(&model.assemble_system(&minus).unwrap()))
            / (2.0 * step);

        let analytic = jac.xi.column(0);
        let denom = fd.norm().max(1e-12);
        assert!(
            (&analytic - &fd).norm() / denom < 1e-4,
            "analytic d-column deviates from finite differences"
        );
    }

    #[test]
    fn loading_column_has_moving_average_pattern() {
        let model = FCModel::new(spec_with_unit(ApproxSpec::MaTruncation { m: 2 }), 80, None)
            .unwrap();
        let d = 0.35;
        let theta = ParamVector(vec![d, 1.2, 0.8, 0.3, 0.6, -0.4, 1.0, 1.0]);
        let jac = model.system_jacobian(&theta).unwrap();
        let system = model.assemble_system(&theta).unwrap();
        let k = system.state_dim();
        let coeffs = model.source().coeffs(d).unwrap();

        // The lambda_1_1 column touches only row 0 of Z at the fractional
        // lags, with the MA coefficients as values (lag zero has weight one).
        let col = jac.xi.column(1);
        for row in 0..k * k {
            assert!(col[row].abs() < 1e-9, "T entries must not move");
        }
        let z_entry = |state: usize, obs: usize| col[k * k + state * 2 + obs];
        assert!((z_entry(0, 0) - 1.0).abs() < 1e-9);
        assert!((z_entry(1, 0) - coeffs.ma[0]).abs() < 1e-9);
        assert!((z_entry(2, 0) - coeffs.ma[1]).abs() < 1e-9);
        assert!(z_entry(0, 1).abs() < 1e-9);
        assert!(z_entry(3, 0).abs() < 1e-9, "unit loading stays untouched");
    }
}
