//! The full maximum likelihood fit driver.
//!
//! Estimation runs in two stages. Conditional-maximization steps first walk
//! uphill cheaply from the semiparametric starting values; they are robust
//! far from the optimum but slow down near it. A BFGS stage on smoothly
//! unconstrained coordinates then polishes to a stationary point of the
//! exact likelihood using the analytic score. The fitted vector is finally
//! put into a canonical form: components ordered by decreasing memory and
//! sign-indeterminate loading columns flipped positive, both of which leave
//! the likelihood unchanged.

use nalgebra::DMatrix;

use super::ecm::ecm_iterate;
use super::fisher::fisher_information;
use super::score::score;
use super::structured::filter_structured;
use super::transform::Transform;
use crate::error::{Error, Result};
use crate::fc::{FCModel, FCModelSpec, ParamVector, ShockCorrelation};
use crate::optim::Bfgs;
use crate::semiparam::starting_values;
use crate::series::Series;

/// Tuning for [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Stop the conditional-maximization stage when the relative likelihood
    /// gain of an iteration falls below this.
    pub em_tol: f64,
    /// Iteration cap for the conditional-maximization stage.
    pub max_em_iterations: usize,
    /// The fit counts as converged when the score has sup-norm below this.
    pub grad_tol: f64,
    /// Iteration cap for the quasi-Newton stage.
    pub max_grad_iterations: usize,
    /// Starting parameters; when absent they are built by
    /// [`starting_values`].
    pub start: Option<ParamVector>,
    /// Whether to invert the information matrix at the optimum.
    pub compute_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            em_tol: 1e-6,
            max_em_iterations: 300,
            grad_tol: 1e-5,
            max_grad_iterations: 200,
            start: None,
            compute_covariance: true,
        }
    }
}

/// Outcome of a maximum likelihood fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Fitted parameters in canonical form.
    pub theta: ParamVector,
    /// Starting parameters the fit actually used.
    pub start: ParamVector,
    /// Log likelihood at `theta`.
    pub loglik: f64,
    /// Conditional-maximization iterations taken.
    pub em_iterations: usize,
    /// Quasi-Newton iterations taken.
    pub grad_iterations: usize,
    /// Whether the score sup-norm reached the tolerance.
    pub converged: bool,
    /// Sup-norm of the score at `theta` (NaN if the score failed there).
    pub score_norm: f64,
    /// Inverse information matrix, when requested and nonsingular.
    pub covariance: Option<DMatrix<f64>>,
    /// Sandwich covariance combining the information with the outer product
    /// of per-observation scores.
    pub covariance_sandwich: Option<DMatrix<f64>>,
    /// Likelihood trace: one entry per EM iteration (evaluated at its input
    /// parameters) plus the final value.
    pub loglik_path: Vec<f64>,
}

/// Maximum likelihood estimation of a fractional components model.
///
/// The data must have `spec.p` columns and the length the model was built
/// for. Returns an error when the likelihood cannot be evaluated anywhere
/// near the starting values or is not finite at the final parameters;
/// non-convergence within the iteration caps is reported through
/// [`FitResult::converged`] instead.
pub fn fit(model: &FCModel, data: &Series, options: &FitOptions) -> Result<FitResult> {
    let spec = model.spec();
    if data.ncols() != spec.p {
        return Err(Error::invalid(format!(
            "fit: data has {} columns, the model expects {}",
            data.ncols(),
            spec.p
        )));
    }
    let structure = model.structure();
    let layout = model.layout();

    let start = match &options.start {
        Some(theta) => {
            if theta.len() != layout.total_len() {
                return Err(Error::parameter(format!(
                    "fit: start has {} entries, the layout needs {}",
                    theta.len(),
                    layout.total_len()
                )));
            }
            theta.clone()
        }
        None => starting_values(spec, data)?.theta,
    };

    // Stage one. Each iteration reports the likelihood at its input point,
    // so `confirmed` always holds the latest parameters known to filter.
    let mut theta = start.clone();
    let mut confirmed = start.clone();
    let mut loglik_path = Vec::new();
    let mut em_iterations = 0;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..options.max_em_iterations {
        match ecm_iterate(model, &theta, data) {
            Ok(step) => {
                em_iterations += 1;
                loglik_path.push(step.loglik);
                confirmed = theta.clone();
                let done = em_iterations > 1
                    && (step.loglik - prev).abs() < options.em_tol * (1.0 + step.loglik.abs());
                prev = step.loglik;
                theta = step.theta;
                if done {
                    break;
                }
            }
            Err(err) => {
                if em_iterations == 0 {
                    return Err(err);
                }
                // The last update left the evaluable region; resume from the
                // point that was still fine.
                theta = confirmed.clone();
                break;
            }
        }
    }

    // The last EM candidate was produced but never filtered.
    let evaluable = |candidate: &ParamVector| -> Result<f64> {
        let system = model.assemble_system(candidate)?;
        Ok(filter_structured(&system, &structure, data)?.loglik)
    };
    match evaluable(&theta) {
        Ok(_) => {}
        Err(err) if em_iterations == 0 => return Err(err),
        Err(_) => theta = confirmed.clone(),
    }

    // Stage two: BFGS on unconstrained coordinates. Line-search trial points
    // only cost a filter pass; gradients reuse the smoothing machinery of
    // the EM stage through the analytic score.
    let transform = Transform::for_spec(spec);
    let objective = |z: &[f64]| -> f64 {
        let candidate = transform.constrained(z);
        match evaluable(&candidate) {
            Ok(value) if value.is_finite() => -value,
            _ => f64::INFINITY,
        }
    };
    let gradient = |z: &[f64]| -> Vec<f64> {
        let candidate = transform.constrained(z);
        match score(model, &candidate, data) {
            Ok(s) => transform.pullback(&candidate, &s).iter().map(|g| -g).collect(),
            Err(_) => vec![0.0; z.len()],
        }
    };
    let solver = Bfgs {
        max_iter: options.max_grad_iterations,
        g_tol: options.grad_tol,
        f_tol: 1e-12,
    };
    let outcome = solver.minimize(objective, gradient, &transform.unbounded(&theta));
    let grad_iterations = outcome.iterations;
    let mut theta = transform.constrained(&outcome.x);

    canonicalize(spec, &mut theta);

    let loglik = evaluable(&theta)?;
    if !loglik.is_finite() {
        return Err(Error::Optim(
            "the likelihood is not finite at the fitted parameters".into(),
        ));
    }
    loglik_path.push(loglik);

    let score_norm = score(model, &theta, data)
        .map(|s| s.amax())
        .unwrap_or(f64::NAN);
    let converged = outcome.converged || score_norm <= options.grad_tol;

    let (covariance, covariance_sandwich) = if options.compute_covariance {
        match fisher_information(model, &theta, data) {
            Ok(fisher) => (fisher.covariance().ok(), fisher.sandwich().ok()),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };

    Ok(FitResult {
        theta,
        start,
        loglik,
        em_iterations,
        grad_iterations,
        converged,
        score_norm,
        covariance,
        covariance_sandwich,
        loglik_path,
    })
}

/// Puts a parameter vector into canonical form without changing the
/// likelihood: orders a free two-component system by decreasing memory and
/// makes the first materially nonzero loading of every sign-indeterminate
/// column positive.
pub(crate) fn canonicalize(spec: &FCModelSpec, theta: &mut ParamVector) {
    relabel_components(spec, theta);
    normalize_signs(spec, theta);
}

/// Component labels are arbitrary when both loading columns are free and
/// each component has its own memory group; order by decreasing memory.
fn relabel_components(spec: &FCModelSpec, theta: &mut ParamVector) {
    if spec.s != 2 || spec.d_groups != [0, 1] {
        return;
    }
    let all_free = spec
        .lambda
        .iter()
        .all(|row| row.iter().all(|entry| entry.is_free()));
    if !all_free {
        return;
    }
    let layout = spec.layout();
    let d_start = layout.d_range().start;
    if theta.0[d_start] >= theta.0[d_start + 1] {
        return;
    }
    theta.0.swap(d_start, d_start + 1);
    // All loadings free means the free slots are two consecutive column
    // blocks of length p; swapping them swaps the components. A single
    // correlation parameter is symmetric in the pair and stays put.
    let l0 = layout.lambda_range().start;
    for i in 0..spec.p {
        theta.0.swap(l0 + i, l0 + spec.p + i);
    }
}

/// Flips the sign of loading columns whose shock sign is unidentified.
fn normalize_signs(spec: &FCModelSpec, theta: &mut ParamVector) {
    let layout = spec.layout();
    let (p, s) = (spec.p, spec.s);
    let col_free: Vec<bool> = (0..s)
        .map(|k| (0..p).all(|i| spec.lambda[i][k].is_free()))
        .collect();
    let lambda = spec.lambda_matrix(theta);
    let wants_flip = |k: usize| -> bool {
        (0..p)
            .map(|i| lambda[(i, k)])
            .find(|v| v.abs() > 1e-12)
            .is_some_and(|v| v < 0.0)
    };

    let mut flipped = vec![false; s];
    match spec.correlation {
        // One shared shock drives every component, so only flipping all
        // columns together preserves the likelihood.
        ShockCorrelation::Singular => {
            if col_free.iter().all(|&free| free) && wants_flip(0) {
                flipped.iter_mut().for_each(|f| *f = true);
            }
        }
        _ => {
            for k in 0..s {
                flipped[k] = col_free[k] && wants_flip(k);
            }
        }
    }
    if flipped.iter().all(|f| !f) {
        return;
    }

    let mut slot = layout.lambda_range().start;
    for k in 0..s {
        for i in 0..p {
            if spec.lambda[i][k].is_free() {
                if flipped[k] {
                    theta.0[slot] = -theta.0[slot];
                }
                slot += 1;
            }
        }
    }
    // Flipping exactly one shock of a correlated pair flips the correlation.
    if spec.correlation == ShockCorrelation::Free {
        let mut idx = layout.corr_range().start;
        for j in 0..s {
            for i in (j + 1)..s {
                if flipped[i] != flipped[j] {
                    theta.0[idx] = -theta.0[idx];
                }
                idx += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::ApproxSpec;
    use crate::fc::MaskEntry;
    use crate::fracdiff::fracint_simulate;
    use crate::optim::NelderMead;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_series(n: usize, cols: usize, rng: &mut impl Rng) -> Series {
        let data: Vec<f64> = (0..n * cols).map(|_| rng.sample(StandardNormal)).collect();
        Series::from_rows((0..cols).map(|j| format!("e{j}")).collect(), data, n, cols).unwrap()
    }

    fn one_component_spec(m: usize, lambda: MaskEntry) -> FCModelSpec {
        FCModelSpec {
            p: 1,
            s: 1,
            lambda: vec![vec![lambda]],
            d_groups: vec![0],
            units: Vec::new(),
            correlation: ShockCorrelation::Identity,
            h: vec![MaskEntry::Free],
            approx: ApproxSpec::MaTruncation { m },
        }
    }

    fn signal_plus_noise(n: usize, d: f64, q: f64, h: f64, seed: u64) -> Series {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shocks = normal_series(n, 1, &mut rng);
        let x = fracint_simulate(d, n, &shocks).unwrap();
        let noise = normal_series(n, 1, &mut rng);
        let y: Vec<f64> = (0..n)
            .map(|t| q.sqrt() * x.get(t, 0) + h.sqrt() * noise.get(t, 0))
            .collect();
        Series::from_column(y).unwrap()
    }

    #[test]
    fn fit_recovers_a_one_component_model() {
        let n = 400;
        let y = signal_plus_noise(n, 0.5, 1.0, 1.0, 3001);
        let spec = one_component_spec(30, MaskEntry::Free);
        let model = FCModel::new(spec, n, None).unwrap();
        let result = fit(&model, &y, &FitOptions::default()).unwrap();

        let d = result.theta.0[0];
        let lambda = result.theta.0[1];
        let h = result.theta.0[2];
        assert!((d - 0.5).abs() < 0.12, "d {d}");
        assert!((0.7..1.35).contains(&lambda), "lambda {lambda}");
        assert!((0.55..1.5).contains(&h), "h {h}");
        assert!(result.converged, "score norm {}", result.score_norm);
        for pair in result.loglik_path.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-10 * (1.0 + pair[0].abs()),
                "likelihood decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert!(result.covariance.is_some());
    }

    #[test]
    fn fit_is_equivariant_under_scaling() {
        let n = 300;
        let y = signal_plus_noise(n, 0.6, 1.5, 0.8, 3002);
        let scaled =
            Series::from_column(y.column(0).iter().map(|v| 3.0 * v).collect()).unwrap();
        let spec = one_component_spec(20, MaskEntry::Free);
        let model = FCModel::new(spec, n, None).unwrap();
        let base = fit(&model, &y, &FitOptions::default()).unwrap();
        let big = fit(&model, &scaled, &FitOptions::default()).unwrap();

        assert!(
            (base.theta.0[0] - big.theta.0[0]).abs() < 1e-4,
            "d {} vs {}",
            base.theta.0[0],
            big.theta.0[0]
        );
        assert!(
            (big.theta.0[1] / (3.0 * base.theta.0[1]) - 1.0).abs() < 5e-3,
            "lambda {} vs {}",
            base.theta.0[1],
            big.theta.0[1]
        );
        assert!(
            (big.theta.0[2] / (9.0 * base.theta.0[2]) - 1.0).abs() < 1e-2,
            "h {} vs {}",
            base.theta.0[2],
            big.theta.0[2]
        );
        // Scaling the data by c shifts the Gaussian log likelihood by
        // exactly -n p log c.
        let shift = big.loglik - base.loglik + n as f64 * 3.0f64.ln();
        assert!(shift.abs() < 1e-2, "loglik shift off by {shift}");
    }

    #[test]
    fn fit_reaches_the_independently_located_optimum() {
        let n = 150;
        let y = signal_plus_noise(n, 0.6, 1.0, 0.5, 3003);
        let spec = one_component_spec(8, MaskEntry::Fixed(1.0));
        let model = FCModel::new(spec, n, None).unwrap();
        let structure = model.structure();

        let result = fit(&model, &y, &FitOptions::default()).unwrap();

        // Locate the optimum without any score machinery: Nelder-Mead, then
        // Newton steps on central finite differences of the likelihood.
        let negll = |point: &[f64]| -> f64 {
            if point[1] <= 0.0 {
                return f64::INFINITY;
            }
            let candidate = ParamVector(point.to_vec());
            model
                .assemble_system(&candidate)
                .and_then(|sys| filter_structured(&sys, &structure, &y))
                .map(|out| -out.loglik)
                .unwrap_or(f64::INFINITY)
        };
        let seed = NelderMead::default().minimize(negll, &[0.4, 1.0], &[0.1, 0.2]);
        let mut point = seed.x.clone();
        for _ in 0..12 {
            let steps = [1e-5 * (1.0 + point[0].abs()), 1e-5 * (1.0 + point[1].abs())];
            let mut grad = [0.0; 2];
            let mut hess = DMatrix::zeros(2, 2);
            let f0 = negll(&point);
            for i in 0..2 {
                let mut up = point.clone();
                let mut dn = point.clone();
                up[i] += steps[i];
                dn[i] -= steps[i];
                let (fu, fd) = (negll(&up), negll(&dn));
                grad[i] = (fu - fd) / (2.0 * steps[i]);
                hess[(i, i)] = (fu - 2.0 * f0 + fd) / (steps[i] * steps[i]);
            }
            let mut cross = point.clone();
            cross[0] += steps[0];
            cross[1] += steps[1];
            let fpp = negll(&cross);
            cross[1] -= 2.0 * steps[1];
            let fpm = negll(&cross);
            cross[0] -= 2.0 * steps[0];
            let fmm = negll(&cross);
            cross[1] += 2.0 * steps[1];
            let fmp = negll(&cross);
            hess[(0, 1)] = (fpp - fpm - fmp + fmm) / (4.0 * steps[0] * steps[1]);
            hess[(1, 0)] = hess[(0, 1)];
            if grad[0].abs().max(grad[1].abs()) < 1e-8 * (1.0 + f0.abs()) {
                break;
            }
            let delta = hess
                .clone()
                .lu()
                .solve(&nalgebra::DVector::from_row_slice(&grad))
                .expect("curvature is positive definite near the optimum");
            point[0] -= delta[0];
            point[1] -= delta[1];
        }

        let optimum = ParamVector(point.clone());
        let s = score(&model, &optimum, &y).unwrap();
        assert!(s.amax() < 1e-5, "score at the located optimum: {}", s.amax());
        for i in 0..2 {
            assert!(
                (result.theta.0[i] - point[i]).abs() < 1e-3,
                "fit {} vs located {}",
                result.theta.0[i],
                point[i]
            );
        }
    }

    fn two_component_spec() -> FCModelSpec {
        FCModelSpec {
            p: 2,
            s: 2,
            lambda: vec![
                vec![MaskEntry::Free, MaskEntry::Free],
                vec![MaskEntry::Free, MaskEntry::Free],
            ],
            d_groups: vec![0, 1],
            units: Vec::new(),
            correlation: ShockCorrelation::Free,
            h: vec![MaskEntry::Free, MaskEntry::Free],
            approx: ApproxSpec::MaTruncation { m: 4 },
        }
    }

    #[test]
    fn canonical_form_preserves_the_likelihood() {
        let spec = two_component_spec();
        let n = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(3004);
        let y = normal_series(n, 2, &mut rng);
        let model = FCModel::new(spec.clone(), n, None).unwrap();
        let structure = model.structure();

        // Memory out of order and a negative-sign second column.
        let raw = ParamVector(vec![0.3, 0.9, -1.0, -0.5, 0.8, -0.6, 0.4, 0.7, 0.9]);
        let mut canon = raw.clone();
        canonicalize(&spec, &mut canon);

        let d = &canon.0[..2];
        assert!(d[0] > d[1], "memory not ordered: {d:?}");
        let lambda = spec.lambda_matrix(&canon);
        assert!(lambda[(0, 0)] > 0.0 && lambda[(0, 1)] > 0.0, "signs: {lambda}");

        let base = filter_structured(&model.assemble_system(&raw).unwrap(), &structure, &y)
            .unwrap()
            .loglik;
        let after = filter_structured(&model.assemble_system(&canon).unwrap(), &structure, &y)
            .unwrap()
            .loglik;
        assert!(
            (base - after).abs() < 1e-9 * (1.0 + base.abs()),
            "{base} vs {after}"
        );

        let mut twice = canon.clone();
        canonicalize(&spec, &mut twice);
        assert_eq!(canon.0, twice.0);
    }

    #[test]
    fn information_matches_the_iid_closed_form_when_the_component_is_muted() {
        let n = 200;
        let h: f64 = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(3005);
        let y = Series::from_column(
            (0..n)
                .map(|_| h.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
        .unwrap();
        let spec = one_component_spec(6, MaskEntry::Fixed(0.0));
        let model = FCModel::new(spec, n, None).unwrap();
        let fisher = fisher_information(&model, &ParamVector(vec![0.5, h]), &y).unwrap();

        // With the loading fixed at zero the data are iid N(0, h): the
        // information for h is n / (2h²) and the memory parameter drops out
        // of the likelihood entirely.
        let expected = n as f64 / (2.0 * h * h);
        let info = &fisher.information;
        assert!(
            (info[(1, 1)] - expected).abs() < 1e-9 * expected,
            "h information {} vs {expected}",
            info[(1, 1)]
        );
        assert!(info[(0, 0)].abs() < 1e-12, "d information {}", info[(0, 0)]);
        assert!(info[(0, 1)].abs() < 1e-12);
        assert!(fisher.covariance().is_err());
    }

    #[test]
    fn sandwich_and_information_covariances_agree_when_well_specified() {
        let n = 1000;
        let y = signal_plus_noise(n, 0.45, 1.0, 1.0, 3006);
        let spec = one_component_spec(30, MaskEntry::Free);
        let model = FCModel::new(spec, n, None).unwrap();
        let truth = ParamVector(vec![0.45, 1.0, 1.0]);
        let fisher = fisher_information(&model, &truth, &y).unwrap();
        let plain = fisher.covariance().unwrap();
        let sandwich = fisher.sandwich().unwrap();
        for i in 0..3 {
            let ratio = sandwich[(i, i)] / plain[(i, i)];
            assert!(
                (0.8..1.25).contains(&ratio),
                "variance ratio for slot {i}: {ratio}"
            );
        }
    }
}
