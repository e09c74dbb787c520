//! Prediction-error information matrix and robust covariance.
//!
//! Differentiating the innovation form gives, for each parameter, the
//! sequences ∂v_t and ∂F_t via one extra pass of filter-like recursions.
//! From those the information matrix accumulates as
//!
//! ```text
//! I_ij = Σ_t ½ tr(F⁻¹ ∂F_i F⁻¹ ∂F_j) + ∂v_i′ F⁻¹ ∂v_j,
//! ```
//!
//! and the per-observation scores feed the outer-product estimate behind the
//! misspecification-robust sandwich covariance. A parameter whose analytic
//! sensitivity pass turns non-finite is redone by finite differences of the
//! filter output, so a single fragile direction cannot spoil the matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fc::{FCModel, ParamVector, ShockCorrelation};
use crate::series::Series;
use crate::statespace::StateSpace;

use super::structured::filter_structured;

/// Relative step for the finite-difference fallback.
const FD_STEP: f64 = 1e-5;

/// Information matrix and per-observation scores at a parameter point.
#[derive(Debug, Clone)]
pub struct FisherOutput {
    /// Prediction-error information matrix, packed parameter order.
    pub information: DMatrix<f64>,
    /// Per-observation scores, one row per time point.
    pub scores: DMatrix<f64>,
}

impl FisherOutput {
    /// Outer product of the per-observation scores.
    pub fn opg(&self) -> DMatrix<f64> {
        self.scores.transpose() * &self.scores
    }

    /// Inverse information, the standard asymptotic covariance.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        invert_information(&self.information)
    }

    /// Sandwich covariance I⁻¹ (Σ_t s_t s_t′) I⁻¹.
    pub fn sandwich(&self) -> Result<DMatrix<f64>> {
        let inv = invert_information(&self.information)?;
        Ok(&inv * self.opg() * &inv)
    }
}

fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    info.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
        Error::RankDeficient("the information matrix is not positive definite".into())
    })
}

/// Derivatives of the system matrices in one parameter direction.
struct ParamDerivatives {
    dt: DMatrix<f64>,
    dz: DMatrix<f64>,
    /// Diagonal of ∂H.
    dh: DVector<f64>,
    drqr: DMatrix<f64>,
    dp1: DMatrix<f64>,
}

/// Innovation sensitivities of one parameter: ∂v_t and ∂F_t for every t.
struct Sensitivity {
    dv: Vec<DVector<f64>>,
    df: Vec<DMatrix<f64>>,
}

impl Sensitivity {
    fn is_finite(&self) -> bool {
        self.dv.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.df.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// Computes the information matrix and per-observation scores at `theta`.
pub fn fisher_information(
    model: &FCModel,
    theta: &ParamVector,
    data: &Series,
) -> Result<FisherOutput> {
    let structure = model.structure();
    let system = model.assemble_system(theta)?;
    let filter = filter_structured(&system, &structure, data)?;
    let derivs = parameter_derivatives(model, theta, &system)?;

    let mut sens = analytic_sensitivities(&system, &derivs, &filter, data.len());
    for (idx, s) in sens.iter_mut().enumerate() {
        if !s.is_finite() {
            *s = fd_sensitivities(model, theta, idx, data)?;
        }
    }

    let n = data.len();
    let n_par = derivs.len();
    let mut info = DMatrix::zeros(n_par, n_par);
    let mut scores = DMatrix::zeros(n, n_par);
    for t in 0..n {
        let finv = &filter.finv[t];
        let fv = finv * &filter.v[t];
        let fdf: Vec<DMatrix<f64>> = sens.iter().map(|s| finv * &s.df[t]).collect();
        for i in 0..n_par {
            for j in i..n_par {
                info[(i, j)] += 0.5 * fdf[i].transpose().dot(&fdf[j])
                    + sens[i].dv[t].dot(&(finv * &sens[j].dv[t]));
            }
            scores[(t, i)] = -0.5 * fdf[i].trace() + 0.5 * fv.dot(&(&sens[i].df[t] * &fv))
                - sens[i].dv[t].dot(&fv);
        }
    }
    for i in 0..n_par {
        for j in 0..i {
            info[(i, j)] = info[(j, i)];
        }
    }

    Ok(FisherOutput {
        information: info,
        scores,
    })
}

/// System-matrix derivatives for every packed parameter.
fn parameter_derivatives(
    model: &FCModel,
    theta: &ParamVector,
    system: &StateSpace,
) -> Result<Vec<ParamDerivatives>> {
    let spec = model.spec();
    let layout = model.layout();
    let structure = model.structure();
    let k = model.state_dim();
    let p = spec.p;
    let us = structure.u * structure.s;

    let zero = || ParamDerivatives {
        dt: DMatrix::zeros(k, k),
        dz: DMatrix::zeros(p, k),
        dh: DVector::zeros(p),
        drqr: DMatrix::zeros(k, k),
        dp1: DMatrix::zeros(k, k),
    };
    let mut out: Vec<ParamDerivatives> = (0..layout.total_len()).map(|_| zero()).collect();

    let n1 = layout.theta1_len();
    if n1 > 0 {
        let jac = model.system_jacobian(theta)?;
        let (dts, dzs) = super::ecm::jacobian_blocks(&jac, k, p);
        for i in 0..n1 {
            out[i].dt = dts[i].clone();
            out[i].dz = dzs[i].clone();
        }
    }

    // The stationary start of each unit moves with its AR coefficient.
    let phi_all = spec.phi_values(theta);
    let mut slot = layout.phi_range().start;
    for (unit_idx, unit) in spec.units.iter().enumerate() {
        if unit.ar.is_free() {
            let f = phi_all[unit_idx];
            let denom = 1.0 - f * f;
            out[slot].dp1[(us + unit_idx, us + unit_idx)] = 2.0 * f / (denom * denom);
            slot += 1;
        }
    }

    // Each free correlation moves one symmetric pair of the shock
    // covariance, and with it the shock-driven head of P1.
    if spec.correlation == ShockCorrelation::Free {
        let s = spec.s;
        let mut slot = layout.corr_range().start;
        for j in 0..s {
            for i in (j + 1)..s {
                let mut dq = DMatrix::zeros(system.shock_dim(), system.shock_dim());
                dq[(i, j)] = 1.0;
                dq[(j, i)] = 1.0;
                let drqr = &system.r * dq * system.r.transpose();
                out[slot]
                    .dp1
                    .view_mut((0, 0), (s, s))
                    .copy_from(&drqr.view((0, 0), (s, s)));
                out[slot].drqr = drqr;
                slot += 1;
            }
        }
    }

    let mut slot = layout.h_range().start;
    for (i, entry) in spec.h.iter().enumerate() {
        if entry.is_free() {
            out[slot].dh[i] = 1.0;
            slot += 1;
        }
    }

    Ok(out)
}

/// Differentiated filter recursions, all parameters in one pass.
fn analytic_sensitivities(
    system: &StateSpace,
    derivs: &[ParamDerivatives],
    filter: &crate::statespace::FilterOutput,
    n: usize,
) -> Vec<Sensitivity> {
    let k = system.state_dim();
    let z = &system.z;
    let t_mat = &system.t;
    let n_par = derivs.len();

    let mut da: Vec<DVector<f64>> = (0..n_par).map(|_| DVector::zeros(k)).collect();
    let mut dp: Vec<DMatrix<f64>> = derivs.iter().map(|d| d.dp1.clone()).collect();
    let mut sens: Vec<Sensitivity> = (0..n_par)
        .map(|_| Sensitivity {
            dv: Vec::with_capacity(n),
            df: Vec::with_capacity(n),
        })
        .collect();

    for t in 0..n {
        let a_t = &filter.a[t];
        let p_t = &filter.p[t];
        let finv = &filter.finv[t];
        let v_t = &filter.v[t];
        let gain = &filter.gain[t];
        let pzt = p_t * z.transpose();
        let l_t = t_mat - gain * z;
        let ltt = l_t.transpose();
        let plt = p_t * &ltt;
        let tp = t_mat * p_t;

        for (i, d) in derivs.iter().enumerate() {
            let dv = -(&d.dz * a_t) - z * &da[i];
            let dpzt = &dp[i] * z.transpose() + p_t * d.dz.transpose();
            let mut df = &d.dz * &pzt + z * &dpzt;
            for (r, &hv) in d.dh.iter().enumerate() {
                df[(r, r)] += hv;
            }
            df = (&df + df.transpose()) * 0.5;

            let dk = (&d.dt * &pzt + t_mat * &dpzt) * finv - gain * (&df * finv);
            let da_next = &d.dt * a_t + t_mat * &da[i] + &dk * v_t + gain * &dv;
            let dl = &d.dt - &dk * z - gain * &d.dz;
            let mut dp_next = &d.dt * &plt + t_mat * (&dp[i] * &ltt) + &tp * dl.transpose();
            dp_next += &d.drqr;
            dp_next = (&dp_next + dp_next.transpose()) * 0.5;

            sens[i].dv.push(dv);
            sens[i].df.push(df);
            da[i] = da_next;
            dp[i] = dp_next;
        }
    }
    sens
}

/// Finite-difference sensitivities of one parameter, used when the analytic
/// pass breaks down.
fn fd_sensitivities(
    model: &FCModel,
    theta: &ParamVector,
    idx: usize,
    data: &Series,
) -> Result<Sensitivity> {
    let structure = model.structure();
    let run = |v: f64| -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
        let mut th = theta.clone();
        th.0[idx] = v;
        let system = model.assemble_system(&th)?;
        let filter = filter_structured(&system, &structure, data)?;
        let f: Vec<DMatrix<f64>> = (0..data.len())
            .map(|t| {
                let mut m = &system.z * &filter.p[t] * system.z.transpose();
                for (r, &hv) in system.h.iter().enumerate() {
                    m[(r, r)] += hv;
                }
                m
            })
            .collect();
        Ok((filter.v, f))
    };
    let base = theta.0[idx];
    let h = FD_STEP * (1.0 + base.abs());
    let ((v_up, f_up), (v_dn, f_dn), width) = match (run(base + h), run(base - h)) {
        (Ok(up), Ok(dn)) => (up, dn, 2.0 * h),
        (Ok(up), Err(_)) => (up, run(base)?, h),
        (Err(_), Ok(dn)) => (run(base)?, dn, h),
        (Err(e), Err(_)) => return Err(e),
    };
    Ok(Sensitivity {
        dv: v_up
            .iter()
            .zip(&v_dn)
            .map(|(u, d)| (u - d) / width)
            .collect(),
        df: f_up
            .iter()
            .zip(&f_dn)
            .map(|(u, d)| (u - d) / width)
            .collect(),
    })
}
