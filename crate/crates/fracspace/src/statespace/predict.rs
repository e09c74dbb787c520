//! Out-of-sample forecasting and model simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::filter::kalman_filter;
use super::model::{psd_sqrt, StateSpace};
use crate::error::Result;
use crate::series::Series;

/// Point forecasts with their uncertainty, one entry per horizon step.
#[derive(Debug, Clone)]
pub struct Forecast {
    /// Predicted observations E[y_{n+j} | y_1..y_n], j = 1..horizon.
    pub mean: Series,
    /// Forecast error covariances Var[y_{n+j} | y_1..y_n].
    pub obs_cov: Vec<DMatrix<f64>>,
    /// Predicted states E[α_{n+j} | y_1..y_n].
    pub state_mean: Vec<DVector<f64>>,
    /// Predicted state covariances Var[α_{n+j} | y_1..y_n].
    pub state_cov: Vec<DMatrix<f64>>,
}

/// Filters the sample, then iterates the prediction step `horizon` times
/// with no further measurement updates.
pub fn forecast(model: &StateSpace, data: &Series, horizon: usize) -> Result<Forecast> {
    let filtered = kalman_filter(model, data)?;
    let n = data.len();
    let p = model.obs_dim();
    let rqr = model.rqr();

    // a[n], p[n] are already the one-step-ahead moments for time n+1.
    let mut a = filtered.a[n].clone();
    let mut cov = filtered.p[n].clone();

    let mut mean_rows = Vec::with_capacity(horizon * p);
    let mut obs_cov = Vec::with_capacity(horizon);
    let mut state_mean = Vec::with_capacity(horizon);
    let mut state_cov = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let y_hat = &model.z * &a;
        let mut f = &model.z * &cov * model.z.transpose();
        for j in 0..p {
            f[(j, j)] += model.h[j];
        }
        mean_rows.extend(y_hat.iter().copied());
        obs_cov.push(f);
        state_mean.push(a.clone());
        state_cov.push(cov.clone());

        a = &model.t * a;
        cov = &model.t * cov * model.t.transpose() + &rqr;
        cov = (&cov + cov.transpose()) * 0.5;
    }

    let mean = Series::from_rows(data.names().to_vec(), mean_rows, horizon, p)?;
    Ok(Forecast {
        mean,
        obs_cov,
        state_mean,
        state_cov,
    })
}

/// Draws one sample path of length `n` from the model, returning the
/// observations together with the simulated states.
pub fn simulate<R: Rng + ?Sized>(
    model: &StateSpace,
    n: usize,
    rng: &mut R,
) -> Result<(Series, Vec<DVector<f64>>)> {
    let p = model.obs_dim();
    let k = model.state_dim();
    let q = model.shock_dim();

    let p1_root = psd_sqrt(&model.p1)?;
    let q_root = psd_sqrt(&model.q)?;

    let draw = |rng: &mut R, dim: usize| -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
    };

    let mut alpha = &model.a1 + &p1_root * draw(rng, k);
    let mut states = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n * p);
    for _ in 0..n {
        let mut y = &model.z * &alpha;
        for j in 0..p {
            y[j] += model.h[j].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        rows.extend(y.iter().copied());
        states.push(alpha.clone());

        let eta = &q_root * draw(rng, q);
        alpha = &model.t * &alpha + &model.r * eta;
    }

    let names = (0..p).map(|j| format!("y{}", j + 1)).collect();
    let data = Series::from_rows(names, rows, n, p)?;
    Ok((data, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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
    fn forecast_matches_scalar_recursion() {
        let phi = 0.6;
        let q = 0.5;
        let h = 0.3;
        let model = ar1_model(phi, q, h);
        let data = Series::from_column(vec![1.0, -0.5, 0.8]).unwrap();

        let fc = forecast(&model, &data, 4).unwrap();
        let filtered = kalman_filter(&model, &data).unwrap();

        let mut a = filtered.a[3][0];
        let mut p = filtered.p[3][(0, 0)];
        for j in 0..4 {
            assert_abs_diff_eq!(fc.mean.get(j, 0), a, epsilon = 1e-12);
            assert_abs_diff_eq!(fc.obs_cov[j][(0, 0)], p + h, epsilon = 1e-12);
            a *= phi;
            p = phi * phi * p + q;
        }
    }

    #[test]
    fn forecast_variance_grows_to_unconditional() {
        let model = ar1_model(0.6, 0.5, 0.0);
        let data = Series::from_column(vec![0.4, 0.1]).unwrap();
        let fc = forecast(&model, &data, 200).unwrap();
        let unconditional = 0.5 / (1.0 - 0.36);
        assert_abs_diff_eq!(
            fc.obs_cov[199][(0, 0)],
            unconditional,
            epsilon = 1e-8
        );
    }

    #[test]
    fn simulate_is_deterministic_given_seed() {
        let model = ar1_model(0.7, 1.0, 0.2);
        let mut rng1 = ChaCha8Rng::seed_from_u64(42);
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let (d1, s1) = simulate(&model, 50, &mut rng1).unwrap();
        let (d2, s2) = simulate(&model, 50, &mut rng2).unwrap();
        assert_eq!(d1.as_slice(), d2.as_slice());
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn simulated_moments_are_plausible() {
        let phi = 0.5;
        let q = 1.0;
        let model = ar1_model(phi, q, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (data, _) = simulate(&model, 20_000, &mut rng).unwrap();
        let col = data.column(0);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
        let target = q / (1.0 - phi * phi);
        assert!(mean.abs() < 0.05, "sample mean {mean}");
        assert!((var - target).abs() / target < 0.05, "sample variance {var}");
    }
}
