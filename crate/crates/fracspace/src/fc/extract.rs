//! Reconstruction of the fractional components from smoothed states.

use super::spec::ParamVector;
use super::FCModel;
use crate::error::{Error, Result};
use crate::series::Series;
use crate::statespace::SmoothOutput;

impl FCModel {
    /// Point estimates of the fractional components from a smoothing pass
    /// over the assembled system,
    ///
    /// ```text
    /// x̃_t = μ̂_t + M_1 μ̂_{t-1} + … + M_w μ̂_{t-w},
    /// ```
    ///
    /// where every lag of μ̂ is read off the smoothed state at time t (the
    /// state keeps u ≥ w+1 lags). Columns are named x1..xs.
    pub fn extract_fractional(
        &self,
        smooth: &SmoothOutput,
        theta: &ParamVector,
    ) -> Result<Series> {
        let spec = self.spec();
        let (_, w) = self.orders();
        let u = self.u();
        let s = spec.s;
        let n = smooth.alpha.len();
        if n == 0 {
            return Err(Error::invalid("smoother output is empty"));
        }
        if smooth.alpha[0].len() != self.state_dim() {
            return Err(Error::invalid(format!(
                "smoothed state dimension {} does not match the model ({})",
                smooth.alpha[0].len(),
                self.state_dim()
            )));
        }

        let coeffs = self.component_coeffs(theta)?;
        let mut columns = vec![Vec::with_capacity(n); s];
        for state in &smooth.alpha {
            for j in 0..s {
                let mut x = state[j];
                for lag in 1..=w.min(u - 1) {
                    x += coeffs[j].ma[lag - 1] * state[lag * s + j];
                }
                columns[j].push(x);
            }
        }
        let names = (0..s).map(|j| format!("x{}", j + 1)).collect();
        Series::from_columns(names, &columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::ApproxSpec;
    use crate::fc::{FCModelSpec, MaskEntry, ShockCorrelation};
    use crate::statespace::kalman_smooth;
    use approx::assert_abs_diff_eq;

    fn univariate_spec(approx: ApproxSpec, h: MaskEntry) -> FCModelSpec {
        FCModelSpec {
            p: 1,
            s: 1,
            lambda: vec![vec![MaskEntry::Free]],
            d_groups: vec![0],
            units: vec![],
            correlation: ShockCorrelation::Identity,
            h: vec![h],
            approx,
        }
    }

    #[test]
    fn pure_autoregression_returns_head_state() {
        // w = 0: the component is the head state itself.
        let spec = univariate_spec(ApproxSpec::ArTruncation { m: 4 }, MaskEntry::Free);
        let model = FCModel::new(spec, 60, None).unwrap();
        let theta = ParamVector(vec![0.3, 1.0, 0.4]);
        let system = model.assemble_system(&theta).unwrap();
        let data = Series::from_column(vec![0.5, -0.2, 0.9, 0.3, -0.6]).unwrap();
        let smooth = kalman_smooth(&system, &data).unwrap();
        let x = model.extract_fractional(&smooth, &theta).unwrap();
        for t in 0..data.len() {
            assert_abs_diff_eq!(x.get(t, 0), smooth.alpha[t][0], epsilon = 1e-14);
        }
    }

    #[test]
    fn noiseless_component_reproduces_observations() {
        let spec = univariate_spec(ApproxSpec::MaTruncation { m: 5 }, MaskEntry::Fixed(0.0));
        let model = FCModel::new(spec, 60, None).unwrap();
        let theta = ParamVector(vec![0.3, 1.0]);
        let system = model.assemble_system(&theta).unwrap();
        let data = Series::from_column(vec![0.5, -0.2, 0.9, 0.3, -0.6, 1.1, 0.0]).unwrap();
        let smooth = kalman_smooth(&system, &data).unwrap();
        let x = model.extract_fractional(&smooth, &theta).unwrap();
        for t in 0..data.len() {
            assert_abs_diff_eq!(x.get(t, 0), data.get(t, 0), epsilon = 1e-6);
        }
    }
}
