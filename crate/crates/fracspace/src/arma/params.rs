//! ARMA coefficient container, impulse responses, and the approximation
//! objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracdiff::pi_coefficients;

/// ARMA(v,w) filter coefficients in the convention
/// `(1 + m_1 L + … + m_w L^w) / (1 − a_1 L − … − a_v L^v)`.
///
/// `unit_roots` records how many AR roots sit exactly at one by
/// construction (one for approximations of `d ∈ [1, 2]`, zero below);
/// [`ArmaParams::validate`] requires every other AR root to be strictly
/// outside the unit circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaParams {
    /// AR coefficients `a_1..a_v`.
    pub ar: Vec<f64>,
    /// MA coefficients `m_1..m_w`.
    pub ma: Vec<f64>,
    /// Number of AR roots pinned to unity.
    pub unit_roots: usize,
}

impl ArmaParams {
    /// Builds and validates the parameter set.
    pub fn new(ar: Vec<f64>, ma: Vec<f64>, unit_roots: usize) -> Result<Self> {
        let p = ArmaParams { ar, ma, unit_roots };
        p.validate()?;
        Ok(p)
    }

    /// AR order `v`.
    pub fn v(&self) -> usize {
        self.ar.len()
    }

    /// MA order `w`.
    pub fn w(&self) -> usize {
        self.ma.len()
    }

    /// Checks finiteness and the root layout: `unit_roots` AR roots at one
    /// (within 1e-6), everything else strictly stable with the margin the
    /// filter initialization relies on.
    pub fn validate(&self) -> Result<()> {
        if self.ar.iter().chain(self.ma.iter()).any(|c| !c.is_finite()) {
            return Err(Error::parameter("ARMA coefficients must be finite"));
        }
        if self.unit_roots > self.ar.len() {
            return Err(Error::parameter(format!(
                "{} declared unit roots exceed AR order {}",
                self.unit_roots,
                self.ar.len()
            )));
        }
        if self.ar.is_empty() {
            return Ok(());
        }
        // Inverse AR roots are the eigenvalues of the companion matrix of
        // 1 - a_1 z - ... - a_v z^v; stability means modulus < 1.
        let v = self.ar.len();
        let mut comp = nalgebra::DMatrix::<f64>::zeros(v, v);
        for (j, &a) in self.ar.iter().enumerate() {
            comp[(0, j)] = a;
        }
        for i in 1..v {
            comp[(i, i - 1)] = 1.0;
        }
        let eigs = comp.complex_eigenvalues();
        let stable_bound = 1.0 / (1.0 + 1e-8);
        let mut units = 0usize;
        for lam in eigs.iter() {
            let modulus = lam.norm();
            if modulus <= stable_bound {
                continue;
            }
            let at_one = (lam.re - 1.0).abs() <= 1e-6 && lam.im.abs() <= 1e-6;
            if at_one && units < self.unit_roots {
                units += 1;
            } else {
                return Err(Error::parameter(format!(
                    "AR root 1/({:.6}{:+.6}i) is not stable and not a declared unit root",
                    lam.re, lam.im
                )));
            }
        }
        if units != self.unit_roots {
            return Err(Error::parameter(format!(
                "expected {} unit AR roots, found {}",
                self.unit_roots, units
            )));
        }
        Ok(())
    }
}

/// Impulse responses `ψ̃_0..ψ̃_{horizon-1}` of the ARMA filter.
///
/// From `(1 − Σ a_i L^i) ψ̃(L) = 1 + Σ m_j L^j`:
/// `ψ̃_j = Σ_{i=1}^{min(j,v)} a_i ψ̃_{j-i} + m_j` with `ψ̃_0 = 1` and
/// `m_j = 0` beyond `w`. Declared unit roots are part of `params.ar`, so no
/// special casing is needed here; `validate` has already vetted the root
/// layout when the parameters were built.
pub fn impulse_responses(params: &ArmaParams, horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::invalid("impulse_responses: horizon must be positive"));
    }
    Ok(impulse_responses_unchecked(&params.ar, &params.ma, horizon))
}

/// Impulse-response recursion without validation, for optimizer inner loops.
pub(crate) fn impulse_responses_unchecked(ar: &[f64], ma: &[f64], horizon: usize) -> Vec<f64> {
    let mut psi = Vec::with_capacity(horizon);
    psi.push(1.0);
    for j in 1..horizon {
        let mut acc = if j <= ma.len() { ma[j - 1] } else { 0.0 };
        for (i, &a) in ar.iter().enumerate().take(j) {
            acc += a * psi[j - 1 - i];
        }
        psi.push(acc);
    }
    psi
}

/// Weighted impulse-response mismatch between the ARMA filter and
/// `Δ^{-d}_+`:
/// `(1/n) Σ_{j=1}^{n} (n − j + 1)(ψ̃_j − ψ_j(d))²`.
pub fn approx_mse(params: &ArmaParams, d: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("approx_mse: n must be positive"));
    }
    let psi_target = pi_coefficients(-d, n + 1)?;
    let psi = impulse_responses(params, n + 1)?;
    Ok(weighted_mse(&psi, &psi_target, n))
}

/// The same objective on precomputed impulse responses.
pub(crate) fn weighted_mse(psi: &[f64], target: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    let mut acc = 0.0;
    for j in 1..=n {
        let diff = psi[j] - target[j];
        acc += (nf - j as f64 + 1.0) * diff * diff;
    }
    acc / nf
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn white_noise_has_flat_irf() {
        let p = ArmaParams::new(vec![], vec![], 0).unwrap();
        let psi = impulse_responses(&p, 5).unwrap();
        assert_eq!(psi, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ar1_irf_is_geometric() {
        let p = ArmaParams::new(vec![0.5], vec![], 0).unwrap();
        let psi = impulse_responses(&p, 6).unwrap();
        for (j, &v) in psi.iter().enumerate() {
            assert_abs_diff_eq!(v, 0.5f64.powi(j as i32), epsilon = 1e-14);
        }
    }

    #[test]
    fn random_walk_irf_is_constant() {
        // (1 - L) in the denominator with one declared unit root.
        let p = ArmaParams::new(vec![1.0], vec![], 1).unwrap();
        let psi = impulse_responses(&p, 10).unwrap();
        for &v in &psi {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn explosive_undeclared_root_is_rejected() {
        assert!(ArmaParams::new(vec![1.5], vec![], 0).is_err());
        assert!(ArmaParams::new(vec![1.0], vec![], 0).is_err());
        assert!(ArmaParams::new(vec![0.5], vec![], 0).is_ok());
    }

    #[test]
    fn mse_of_exact_match_is_zero() {
        // For d = 0 the target is white noise; an empty ARMA matches exactly.
        let p = ArmaParams::new(vec![], vec![], 0).unwrap();
        let mse = approx_mse(&p, 0.0, 100).unwrap();
        assert_abs_diff_eq!(mse, 0.0, epsilon = 1e-30);
    }

    #[test]
    fn mse_weights_emphasize_early_lags() {
        // An error at lag 1 weighs n times as much as one at lag n.
        let n = 50;
        let target = vec![0.0; n + 1];
        let mut early = vec![0.0; n + 1];
        early[1] = 1.0;
        let mut late = vec![0.0; n + 1];
        late[n] = 1.0;
        let r = weighted_mse(&early, &target, n) / weighted_mse(&late, &target, n);
        assert_abs_diff_eq!(r, n as f64, epsilon = 1e-12);
    }
}
