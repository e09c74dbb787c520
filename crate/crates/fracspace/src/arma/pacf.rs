//! Partial-autocorrelation parametrization of stable polynomials.
//!
//! A polynomial `1 − c_1 L − … − c_k L^k` with all roots outside the unit
//! circle corresponds one-to-one to partial autocorrelations
//! `r_1..r_k ∈ (−1, 1)` via the Levinson–Durbin recursion. Composing with
//! the Fisher z transform gives unconstrained coordinates in which both the
//! approximation fits and the table splines operate.

/// Cap on transformed coordinates. `tanh(8) ≈ 1 − 2.3e-7`, which keeps every
/// root a safe margin off the unit circle; the cap only binds where the
/// optimum genuinely pushes a root toward one (the `d → 2` table edge).
pub const Z_CAP: f64 = 8.0;

/// Fisher z transform `0.5 · ln((1+x)/(1−x))`.
pub fn fisher_z(x: f64) -> f64 {
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

/// Inverse Fisher z transform (`tanh`).
pub fn fisher_z_inv(z: f64) -> f64 {
    z.tanh()
}

/// Maps partial autocorrelations to the coefficients `c_1..c_k` of a stable
/// polynomial `1 − c_1 L − … − c_k L^k`.
pub fn pacf_to_coeffs(pacs: &[f64]) -> Vec<f64> {
    let k = pacs.len();
    let mut c = vec![0.0; k];
    let mut prev = vec![0.0; k];
    for (step, &r) in pacs.iter().enumerate() {
        prev[..step].copy_from_slice(&c[..step]);
        c[step] = r;
        for i in 0..step {
            c[i] = prev[i] - r * prev[step - 1 - i];
        }
    }
    c
}

/// Same map carrying derivatives along: given `d pacs / d θ` for one scalar
/// parameter θ, returns `(c, dc/dθ)` by differentiating the recursion.
pub fn pacf_to_coeffs_with_deriv(pacs: &[f64], dpacs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = pacs.len();
    let mut c = vec![0.0; k];
    let mut dc = vec![0.0; k];
    let mut prev = vec![0.0; k];
    let mut dprev = vec![0.0; k];
    for step in 0..k {
        let (r, dr) = (pacs[step], dpacs[step]);
        prev[..step].copy_from_slice(&c[..step]);
        dprev[..step].copy_from_slice(&dc[..step]);
        c[step] = r;
        dc[step] = dr;
        for i in 0..step {
            c[i] = prev[i] - r * prev[step - 1 - i];
            dc[i] = dprev[i] - dr * prev[step - 1 - i] - r * dprev[step - 1 - i];
        }
    }
    (c, dc)
}

/// Inverse Levinson–Durbin map; returns `None` when the polynomial is not
/// stable (some implied partial autocorrelation has modulus ≥ 1).
pub fn coeffs_to_pacf(coeffs: &[f64]) -> Option<Vec<f64>> {
    let k = coeffs.len();
    let mut pacs = vec![0.0; k];
    let mut cur = coeffs.to_vec();
    for step in (0..k).rev() {
        let r = cur[step];
        if !(r.abs() < 1.0) {
            return None;
        }
        pacs[step] = r;
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..step)
            .map(|i| (cur[i] + r * cur[step - 1 - i]) / denom)
            .collect();
        cur[..step].copy_from_slice(&prev);
    }
    Some(pacs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn round_trip_through_pacs() {
        let pacs = [0.7, -0.3, 0.2, 0.05];
        let coeffs = pacf_to_coeffs(&pacs);
        let back = coeffs_to_pacf(&coeffs).unwrap();
        for (a, b) in pacs.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn first_order_is_identity() {
        assert_eq!(pacf_to_coeffs(&[0.6]), vec![0.6]);
        assert_eq!(coeffs_to_pacf(&[0.6]).unwrap(), vec![0.6]);
    }

    #[test]
    fn stable_map_produces_stable_polynomials() {
        // Coefficients from pacs in (-1,1) must define a stable polynomial:
        // check via the companion eigenvalues.
        let pacs = [0.95, -0.9, 0.85];
        let c = pacf_to_coeffs(&pacs);
        let mut comp = nalgebra::DMatrix::<f64>::zeros(3, 3);
        for (j, &cj) in c.iter().enumerate() {
            comp[(0, j)] = cj;
        }
        comp[(1, 0)] = 1.0;
        comp[(2, 1)] = 1.0;
        for lam in comp.complex_eigenvalues().iter() {
            assert!(lam.norm() < 1.0);
        }
    }

    #[test]
    fn unstable_polynomial_is_detected() {
        assert!(coeffs_to_pacf(&[1.01]).is_none());
        // (1 - 1.2L)(1 - 0.5L): one explosive factor.
        assert!(coeffs_to_pacf(&[1.7, -0.6]).is_none());
    }

    #[test]
    fn fisher_z_round_trip() {
        for &x in &[-0.999, -0.5, 0.0, 0.3, 0.9999] {
            assert_abs_diff_eq!(fisher_z_inv(fisher_z(x)), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_recursion_matches_finite_difference() {
        let pacs = [0.4, -0.25, 0.6];
        // Perturb the middle pac only.
        let dpacs = [0.0, 1.0, 0.0];
        let (_, dc) = pacf_to_coeffs_with_deriv(&pacs, &dpacs);
        let h = 1e-7;
        let mut hi = pacs;
        hi[1] += h;
        let mut lo = pacs;
        lo[1] -= h;
        let chi = pacf_to_coeffs(&hi);
        let clo = pacf_to_coeffs(&lo);
        for i in 0..3 {
            let fd = (chi[i] - clo[i]) / (2.0 * h);
            assert_abs_diff_eq!(dc[i], fd, epsilon = 1e-6);
        }
    }
}
