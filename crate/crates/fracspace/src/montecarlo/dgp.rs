//! The four simulation designs and their likelihood specifications.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arma::{ApproxSpec, D_MAX, D_MIN};
use crate::error::{Error, Result};
use crate::fc::{FCModelSpec, MaskEntry, ShockCorrelation, ShortMemoryUnit};
use crate::fracdiff::fracint_simulate;
use crate::series::Series;

/// Noise floor used where a design has no measurement error. The likelihood
/// machinery requires strictly positive noise variances, so exactly-zero
/// entries are fixed at this value instead; the perturbation is far below
/// the resolution of any reported statistic.
pub(crate) const NOISE_FLOOR: f64 = 1e-6;

/// Schema tag expected in serialized [`DgpConfig`] files.
pub const DGP_SCHEMA: &str = "fracspace-dgp-v1";

/// The data generating processes of the simulation studies. Fractional
/// components are simulated exactly from their truncated infinite-order
/// representation, not through any finite approximation, and all shocks are
/// standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DgpSpec {
    /// Univariate signal plus noise, y_t = √q x_t + ε_t, with x_t fractional
    /// of order `d` and unit shock and noise variances; `q` is the
    /// signal-to-noise ratio.
    Dgp1 { q: f64, d: f64 },
    /// Bivariate common fractional component with short-run dynamics and no
    /// measurement error: y_1t = x_t + c z_1t, y_2t = x_t + c e z_1t + c z_2t,
    /// where both z_it are AR(1) with coefficient 0.5 and unit shock
    /// variance. The cointegration vector is (1, −1)′.
    Dgp2 { c: f64, e: f64, d: f64 },
    /// Bivariate system with two fractional components of orders `d1 > d2`,
    /// loadings ((1, a), (1, −a)), shock correlation `r`, and unit
    /// measurement noise. At r = 1 both components share one shock and the
    /// system admits a polynomial cointegration relation.
    Dgp3 { a: f64, d1: f64, d2: f64, r: f64 },
    /// p-variate system with two fractional components of orders `d1 > d2`,
    /// loadings Λ_i1 = a and Λ_i2 = a (−1)^{i+1}, uncorrelated shocks, and
    /// unit measurement noise.
    Dgp4 { p: usize, a: f64, d1: f64, d2: f64 },
}

impl DgpSpec {
    /// Number of observables the design produces.
    pub fn obs_dim(&self) -> usize {
        match *self {
            DgpSpec::Dgp1 { .. } => 1,
            DgpSpec::Dgp2 { .. } | DgpSpec::Dgp3 { .. } => 2,
            DgpSpec::Dgp4 { p, .. } => p,
        }
    }

    /// Number of fractional components.
    pub fn n_components(&self) -> usize {
        match *self {
            DgpSpec::Dgp1 { .. } | DgpSpec::Dgp2 { .. } => 1,
            DgpSpec::Dgp3 { .. } | DgpSpec::Dgp4 { .. } => 2,
        }
    }

    /// Checks parameter ranges. Memory orders must be estimable, so they are
    /// confined to the supported range; designs with two orders require
    /// d1 > d2 because the labels identify the larger order.
    pub fn validate(&self) -> Result<()> {
        let check_d = |d: f64, name: &str| {
            if d >= D_MIN && d <= D_MAX && d.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} = {d} is outside the supported range [{D_MIN}, {D_MAX}]"
                )))
            }
        };
        match *self {
            DgpSpec::Dgp1 { q, d } => {
                check_d(d, "d")?;
                if !(q >= 0.0) {
                    return Err(Error::invalid("the signal-to-noise ratio q must be >= 0"));
                }
            }
            DgpSpec::Dgp2 { c, e, d } => {
                check_d(d, "d")?;
                if !(c > 0.0) || !e.is_finite() {
                    return Err(Error::invalid("the noise scale c must be positive"));
                }
            }
            DgpSpec::Dgp3 { a, d1, d2, r } => {
                check_d(d1, "d1")?;
                check_d(d2, "d2")?;
                if d1 <= d2 {
                    return Err(Error::invalid("d1 must exceed d2"));
                }
                if a == 0.0 || !a.is_finite() {
                    return Err(Error::invalid("the loading a must be nonzero"));
                }
                if !(-1.0..=1.0).contains(&r) {
                    return Err(Error::invalid("the shock correlation r must lie in [-1, 1]"));
                }
            }
            DgpSpec::Dgp4 { p, a, d1, d2 } => {
                check_d(d1, "d1")?;
                check_d(d2, "d2")?;
                if d1 <= d2 {
                    return Err(Error::invalid("d1 must exceed d2"));
                }
                if a == 0.0 || !a.is_finite() {
                    return Err(Error::invalid("the loading a must be nonzero"));
                }
                if p < 2 {
                    return Err(Error::invalid("the design needs at least two observables"));
                }
            }
        }
        Ok(())
    }
}

/// A complete simulation request: design, sample size, and seed. The seed is
/// carried as data so that artifacts record how they were produced; callers
/// feed it to the generator they pass to [`simulate_dgp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    /// Format tag, [`DGP_SCHEMA`].
    pub schema: String,
    /// The design to draw from.
    pub dgp: DgpSpec,
    /// Sample size.
    pub n: usize,
    /// Seed for the generator that produces this sample.
    pub seed: u64,
}

impl DgpConfig {
    /// Checks the schema tag and the design parameters.
    pub fn validate(&self) -> Result<()> {
        if self.schema != DGP_SCHEMA {
            return Err(Error::invalid(format!(
                "unsupported dgp config schema {:?}, expected {:?}",
                self.schema, DGP_SCHEMA
            )));
        }
        if self.n == 0 {
            return Err(Error::invalid("the sample size must be positive"));
        }
        self.dgp.validate()
    }
}

/// One simulated sample along with the latent fractional components that
/// generated it, kept for evaluating signal extraction.
#[derive(Debug, Clone)]
pub(crate) struct DgpDraw {
    pub y: Series,
    pub x: Series,
}

/// Simulates `config.n` observations from `config.dgp` using the supplied
/// generator.
pub fn simulate_dgp<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Result<Series> {
    config.validate()?;
    draw(&config.dgp, config.n, rng).map(|sample| sample.y)
}

/// Draws a sample of length `n` together with its latent components. Shock
/// streams are consumed in a fixed order (fractional shocks first, one
/// component at a time, then short-memory and measurement noise), so a given
/// generator state always yields the same sample.
pub(crate) fn draw<R: Rng + ?Sized>(spec: &DgpSpec, n: usize, rng: &mut R) -> Result<DgpDraw> {
    match *spec {
        DgpSpec::Dgp1 { q, d } => {
            let xi = Series::from_column(normal_column(n, rng))?;
            let x = fracint_simulate(d, n, &xi)?;
            let scale = q.sqrt();
            let y: Vec<f64> = (0..n)
                .map(|t| scale * x.get(t, 0) + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(DgpDraw {
                y: Series::from_columns(vec!["y1".into()], &[y])?,
                x: rename(x, &["x1"])?,
            })
        }
        DgpSpec::Dgp2 { c, e, d } => {
            let xi = Series::from_column(normal_column(n, rng))?;
            let x = fracint_simulate(d, n, &xi)?;
            let z1 = ar1_column(0.5, n, rng);
            let z2 = ar1_column(0.5, n, rng);
            let y1: Vec<f64> = (0..n).map(|t| x.get(t, 0) + c * z1[t]).collect();
            let y2: Vec<f64> = (0..n)
                .map(|t| x.get(t, 0) + c * e * z1[t] + c * z2[t])
                .collect();
            Ok(DgpDraw {
                y: Series::from_columns(vec!["y1".into(), "y2".into()], &[y1, y2])?,
                x: rename(x, &["x1"])?,
            })
        }
        DgpSpec::Dgp3 { a, d1, d2, r } => {
            let xi1 = normal_column(n, rng);
            let w = normal_column(n, rng);
            let mix = (1.0 - r * r).max(0.0).sqrt();
            let xi2: Vec<f64> = (0..n).map(|t| r * xi1[t] + mix * w[t]).collect();
            let x1 = fracint_simulate(d1, n, &Series::from_column(xi1)?)?;
            let x2 = fracint_simulate(d2, n, &Series::from_column(xi2)?)?;
            let eps = noise_columns(n, 2, rng);
            let y1: Vec<f64> = (0..n)
                .map(|t| x1.get(t, 0) + a * x2.get(t, 0) + eps[0][t])
                .collect();
            let y2: Vec<f64> = (0..n)
                .map(|t| x1.get(t, 0) - a * x2.get(t, 0) + eps[1][t])
                .collect();
            Ok(DgpDraw {
                y: Series::from_columns(vec!["y1".into(), "y2".into()], &[y1, y2])?,
                x: Series::from_columns(
                    vec!["x1".into(), "x2".into()],
                    &[x1.column(0), x2.column(0)],
                )?,
            })
        }
        DgpSpec::Dgp4 { p, a, d1, d2 } => {
            let xi1 = normal_column(n, rng);
            let xi2 = normal_column(n, rng);
            let x1 = fracint_simulate(d1, n, &Series::from_column(xi1)?)?;
            let x2 = fracint_simulate(d2, n, &Series::from_column(xi2)?)?;
            let eps = noise_columns(n, p, rng);
            let mut names = Vec::with_capacity(p);
            let mut cols = Vec::with_capacity(p);
            for i in 0..p {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                names.push(format!("y{}", i + 1));
                cols.push(
                    (0..n)
                        .map(|t| a * x1.get(t, 0) + sign * a * x2.get(t, 0) + eps[i][t])
                        .collect(),
                );
            }
            Ok(DgpDraw {
                y: Series::from_columns(names, &cols)?,
                x: Series::from_columns(
                    vec!["x1".into(), "x2".into()],
                    &[x1.column(0), x2.column(0)],
                )?,
            })
        }
    }
}

/// The likelihood specification matching a design: parameters are free
/// exactly where the design has them and fixed elsewhere. With
/// `restrict_correlation` the two fractional shocks are forced onto a single
/// stream (the r = 1 estimator); that restriction only exists for designs
/// with two components and a correlation parameter.
pub fn estimation_spec(
    dgp: &DgpSpec,
    approx: ApproxSpec,
    restrict_correlation: bool,
) -> Result<FCModelSpec> {
    if restrict_correlation && !matches!(dgp, DgpSpec::Dgp3 { .. }) {
        return Err(Error::invalid(
            "the singular-correlation restriction applies only to the correlated two-component design",
        ));
    }
    let free = MaskEntry::Free;
    let spec = match *dgp {
        DgpSpec::Dgp1 { .. } => FCModelSpec {
            p: 1,
            s: 1,
            lambda: vec![vec![free]],
            d_groups: vec![0],
            units: vec![],
            correlation: ShockCorrelation::Identity,
            h: vec![free],
            approx,
        },
        DgpSpec::Dgp2 { .. } => FCModelSpec {
            p: 2,
            s: 1,
            lambda: vec![vec![free], vec![free]],
            d_groups: vec![0],
            units: vec![
                ShortMemoryUnit {
                    ar: free,
                    gamma: vec![free, free],
                },
                ShortMemoryUnit {
                    ar: free,
                    gamma: vec![MaskEntry::Fixed(0.0), free],
                },
            ],
            correlation: ShockCorrelation::Identity,
            h: vec![MaskEntry::Fixed(NOISE_FLOOR), MaskEntry::Fixed(NOISE_FLOOR)],
            approx,
        },
        DgpSpec::Dgp3 { .. } => FCModelSpec {
            p: 2,
            s: 2,
            lambda: vec![vec![free, free], vec![free, free]],
            d_groups: vec![0, 1],
            units: vec![],
            correlation: if restrict_correlation {
                ShockCorrelation::Singular
            } else {
                ShockCorrelation::Free
            },
            h: vec![free, free],
            approx,
        },
        DgpSpec::Dgp4 { p, .. } => FCModelSpec {
            p,
            s: 2,
            lambda: vec![vec![free, free]; p],
            d_groups: vec![0, 1],
            units: vec![],
            correlation: ShockCorrelation::Identity,
            h: vec![free; p],
            approx,
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn normal_column<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Stationary AR(1) path with unit shock variance: the first value is drawn
/// from the stationary distribution, matching the initialization the
/// likelihood assumes for short-memory units.
fn ar1_column<R: Rng + ?Sized>(phi: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let mut z = Vec::with_capacity(n);
    let mut prev = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    z.push(prev);
    for _ in 1..n {
        prev = phi * prev + rng.sample::<f64, _>(StandardNormal);
        z.push(prev);
    }
    z
}

/// Measurement noise drawn time-major so the stream order is independent of
/// how the columns are consumed afterwards.
fn noise_columns<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut cols = vec![vec![0.0; n]; p];
    for t in 0..n {
        for col in cols.iter_mut() {
            col[t] = rng.sample(StandardNormal);
        }
    }
    cols
}

fn rename(series: Series, names: &[&str]) -> Result<Series> {
    let cols: Vec<Vec<f64>> = (0..series.ncols()).map(|j| series.column(j)).collect();
    Series::from_columns(names.iter().map(|s| s.to_string()).collect(), &cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracdiff::{fracdiff_slice, pi_coefficients};
    use crate::semiparam::exact_local_whittle_with;
    use crate::semiparam::WhittleConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arma33() -> ApproxSpec {
        ApproxSpec::Arma { v: 3, w: 3 }
    }

    #[test]
    fn zero_signal_reduces_the_univariate_design_to_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let sample = draw(&DgpSpec::Dgp1 { q: 0.0, d: 0.6 }, n, &mut rng).unwrap();
        let y = sample.y.column(0);
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let acov1 = (1..n)
            .map(|t| (y[t] - mean) * (y[t - 1] - mean))
            .sum::<f64>()
            / n as f64;
        assert!((var - 1.0).abs() < 0.08, "variance {var}");
        assert!((acov1 / var).abs() < 0.05, "lag-one correlation {}", acov1 / var);
    }

    #[test]
    fn the_bivariate_difference_has_short_memory() {
        // The difference y1 - y2 removes the fractional component and leaves
        // AR(1) noise, so its estimated memory centers near zero while the
        // observables themselves carry d = 0.75. A modest bandwidth keeps
        // the short-memory bias of the Whittle estimate small.
        let spec = DgpSpec::Dgp2 {
            c: 2.0,
            e: 0.5,
            d: 0.75,
        };
        let config = WhittleConfig::default();
        let n = 1024;
        let mut sum = 0.0;
        let reps = 30;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + rep);
            let sample = draw(&spec, n, &mut rng).unwrap();
            let diff: Vec<f64> = (0..n)
                .map(|t| sample.y.get(t, 0) - sample.y.get(t, 1))
                .collect();
            sum += exact_local_whittle_with(&config, &diff, 32).unwrap();
        }
        let mean = sum / reps as f64;
        assert!(mean.abs() < 0.15, "difference memory centered at {mean}");
    }

    #[test]
    fn perfectly_correlated_shocks_share_one_stream() {
        let spec = DgpSpec::Dgp3 {
            a: 2.0,
            d1: 0.8,
            d2: 0.2,
            r: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sample = draw(&spec, 300, &mut rng).unwrap();
        let xi1 = fracdiff_slice(&sample.x.column(0), 0.8).unwrap();
        let xi2 = fracdiff_slice(&sample.x.column(1), 0.2).unwrap();
        for (a, b) in xi1.iter().zip(&xi2) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn differenced_variance_matches_the_design() {
        // Var(Δ^d y) = q + Var(Δ^d ε) with Var(Δ^d ε_t) -> Σ_j π_j(d)² as
        // the truncation fills in, a direct check on the simulated scale.
        let (q, d) = (2.0, 0.35);
        let n = 3000;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sample = draw(&DgpSpec::Dgp1 { q, d }, n, &mut rng).unwrap();
        let diff = fracdiff_slice(&sample.y.column(0), d).unwrap();
        let var = diff.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let pi_sq: f64 = pi_coefficients(d, n).unwrap().iter().map(|w| w * w).sum();
        let expected = q + pi_sq;
        assert!(
            (var / expected - 1.0).abs() < 0.15,
            "variance {var}, expected {expected}"
        );
    }

    #[test]
    fn estimation_specs_match_the_designs() {
        let dgp1 = estimation_spec(&DgpSpec::Dgp1 { q: 1.0, d: 0.5 }, arma33(), false).unwrap();
        assert_eq!(dgp1.layout().total_len(), 3);

        let dgp2 = estimation_spec(
            &DgpSpec::Dgp2 {
                c: 2.0,
                e: 0.0,
                d: 0.75,
            },
            arma33(),
            false,
        )
        .unwrap();
        assert_eq!(dgp2.layout().total_len(), 8);
        assert!(dgp2.h.iter().all(|entry| !entry.is_free()));

        let dgp3 = DgpSpec::Dgp3 {
            a: 2.0,
            d1: 0.8,
            d2: 0.2,
            r: 1.0,
        };
        let unrestricted = estimation_spec(&dgp3, arma33(), false).unwrap();
        assert_eq!(unrestricted.layout().total_len(), 9);
        assert_eq!(unrestricted.correlation, ShockCorrelation::Free);
        let restricted = estimation_spec(&dgp3, arma33(), true).unwrap();
        assert_eq!(restricted.layout().total_len(), 8);
        assert_eq!(restricted.correlation, ShockCorrelation::Singular);

        let dgp4 = estimation_spec(
            &DgpSpec::Dgp4 {
                p: 3,
                a: 0.5,
                d1: 0.6,
                d2: 0.2,
            },
            arma33(),
            false,
        )
        .unwrap();
        assert_eq!(dgp4.layout().total_len(), 2 + 6 + 3);

        assert!(estimation_spec(&DgpSpec::Dgp1 { q: 1.0, d: 0.5 }, arma33(), true).is_err());
    }

    #[test]
    fn configs_validate_their_schema_and_parameters() {
        let config = DgpConfig {
            schema: DGP_SCHEMA.into(),
            dgp: DgpSpec::Dgp1 { q: 1.0, d: 0.5 },
            n: 250,
            seed: 7,
        };
        config.validate().unwrap();

        let parsed: DgpConfig = serde_json::from_str(
            r#"{"schema":"fracspace-dgp-v1","dgp":{"kind":"dgp3","a":2.0,"d1":0.8,"d2":0.2,"r":1.0},"n":250,"seed":1}"#,
        )
        .unwrap();
        parsed.validate().unwrap();
        assert_eq!(parsed.dgp.obs_dim(), 2);

        let mut bad = config.clone();
        bad.schema = "something-else".into();
        assert!(bad.validate().is_err());

        assert!(DgpSpec::Dgp3 {
            a: 2.0,
            d1: 0.2,
            d2: 0.8,
            r: 0.5
        }
        .validate()
        .is_err());
        assert!(DgpSpec::Dgp1 { q: -1.0, d: 0.5 }.validate().is_err());
        assert!(DgpSpec::Dgp3 {
            a: 2.0,
            d1: 0.8,
            d2: 0.2,
            r: 1.5
        }
        .validate()
        .is_err());
    }
}
