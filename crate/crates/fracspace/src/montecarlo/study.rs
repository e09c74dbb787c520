//! Replicated estimation studies and their summary reports.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arma::ApproxSpec;
use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions};
use crate::fc::FCModel;
use crate::fracdiff::fracdiff_slice;
use crate::montecarlo::angle::{cointegration_angle, orth_complement};
use crate::montecarlo::dgp::{draw, estimation_spec, DgpDraw, DgpSpec};
use crate::semiparam::{exact_local_whittle, nbls, nbls_bandwidth, WhittleConfig};
use crate::series::{format_full, Series};
use crate::statespace::{forecast, kalman_smooth};

/// Schema tag expected in serialized [`StudyConfig`] files.
pub const STUDY_SCHEMA: &str = "fracspace-study-v1";

/// Schema tag written into serialized [`StudyReport`]s.
pub const REPORT_SCHEMA: &str = "fracspace-report-v1";

/// An estimation method entered in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Estimator {
    /// Maximum likelihood with the tabulated ARMA(v, w) approximation.
    MlArma { v: usize, w: usize },
    /// Maximum likelihood with the autoregressive truncation of order m.
    MlArTrunc { m: usize },
    /// Maximum likelihood with the moving-average truncation of order m.
    MlMaTrunc { m: usize },
    /// Exact local Whittle estimation of the memory orders, with
    /// narrow-band regression residuals supplying the smaller order where a
    /// design has two.
    Ew,
    /// Narrow-band least squares estimation of the cointegration space.
    Nbls,
    /// Maximum likelihood with perfectly correlated fractional shocks
    /// imposed, using the tabulated ARMA(v, w) approximation.
    RestrictedMl { v: usize, w: usize },
}

impl Estimator {
    /// Whether this method is defined for the given design. Narrow-band
    /// regression needs at least two observables and the correlation
    /// restriction needs a design that has a correlation parameter;
    /// inapplicable pairs are skipped by [`run_study`].
    pub fn applies_to(&self, dgp: &DgpSpec) -> bool {
        match self {
            Estimator::Nbls => dgp.obs_dim() >= 2,
            Estimator::RestrictedMl { .. } => matches!(dgp, DgpSpec::Dgp3 { .. }),
            _ => true,
        }
    }

    fn approx(&self) -> Option<ApproxSpec> {
        match *self {
            Estimator::MlArma { v, w } | Estimator::RestrictedMl { v, w } => {
                Some(ApproxSpec::Arma { v, w })
            }
            Estimator::MlArTrunc { m } => Some(ApproxSpec::ArTruncation { m }),
            Estimator::MlMaTrunc { m } => Some(ApproxSpec::MaTruncation { m }),
            Estimator::Ew | Estimator::Nbls => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Estimator::MlArma { v, w } | Estimator::RestrictedMl { v, w } => {
                if v == 0 || w == 0 {
                    return Err(Error::invalid("ARMA orders must be positive"));
                }
            }
            Estimator::MlArTrunc { m } | Estimator::MlMaTrunc { m } => {
                if m == 0 {
                    return Err(Error::invalid("truncation order must be positive"));
                }
            }
            Estimator::Ew | Estimator::Nbls => {}
        }
        Ok(())
    }

    /// Builds the likelihood model this method fits, or `None` for the
    /// semiparametric methods.
    fn model(&self, dgp: &DgpSpec, n: usize, table_dir: Option<&Path>) -> Result<Option<FCModel>> {
        let Some(approx) = self.approx() else {
            return Ok(None);
        };
        let spec = estimation_spec(dgp, approx, matches!(self, Estimator::RestrictedMl { .. }))?;
        FCModel::new(spec, n, table_dir).map(Some)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Estimator::MlArma { v, w } => write!(f, "ml-arma({v},{w})"),
            Estimator::MlArTrunc { m } => write!(f, "ml-ar-trunc({m})"),
            Estimator::MlMaTrunc { m } => write!(f, "ml-ma-trunc({m})"),
            Estimator::Ew => write!(f, "ew"),
            Estimator::Nbls => write!(f, "nbls"),
            Estimator::RestrictedMl { v, w } => write!(f, "restricted-ml({v},{w})"),
        }
    }
}

impl fmt::Display for DgpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DgpSpec::Dgp1 { q, d } => write!(f, "dgp1(q={q},d={d})"),
            DgpSpec::Dgp2 { c, e, d } => write!(f, "dgp2(c={c},e={e},d={d})"),
            DgpSpec::Dgp3 { a, d1, d2, r } => write!(f, "dgp3(a={a},d1={d1},d2={d2},r={r})"),
            DgpSpec::Dgp4 { p, a, d1, d2 } => write!(f, "dgp4(p={p},a={a},d1={d1},d2={d2})"),
        }
    }
}

/// A replicated study: the cross product of designs and sample sizes, each
/// cell estimated by every applicable method on shared simulated samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Format tag, [`STUDY_SCHEMA`].
    pub schema: String,
    /// Label carried into the report.
    pub name: String,
    /// Designs to simulate.
    pub dgps: Vec<DgpSpec>,
    /// Sample sizes; every design is run at every size.
    pub sample_sizes: Vec<usize>,
    /// Methods to run on each sample.
    pub estimators: Vec<Estimator>,
    /// Replications per cell.
    pub replications: usize,
    /// Master seed; per-replication streams are derived from it.
    pub seed: u64,
    /// When positive, simulate this many extra observations per replication
    /// and record the out-of-sample forecast error of the likelihood
    /// estimators over horizons 1..=horizon.
    #[serde(default)]
    pub horizon: usize,
    /// When set, record the error of the smoothed fractional components
    /// against the simulated ones for the likelihood estimators.
    #[serde(default)]
    pub smoothed_components: bool,
    /// Cache directory for approximation tables.
    #[serde(default)]
    pub table_dir: Option<PathBuf>,
}

impl StudyConfig {
    /// Checks the schema tag and every design, size, and estimator entry.
    pub fn validate(&self) -> Result<()> {
        if self.schema != STUDY_SCHEMA {
            return Err(Error::invalid(format!(
                "unsupported study schema {:?}, expected {:?}",
                self.schema, STUDY_SCHEMA
            )));
        }
        if self.dgps.is_empty() || self.sample_sizes.is_empty() || self.estimators.is_empty() {
            return Err(Error::invalid(
                "a study needs at least one design, sample size, and estimator",
            ));
        }
        for dgp in &self.dgps {
            dgp.validate()?;
        }
        for &n in &self.sample_sizes {
            if n < 32 {
                return Err(Error::invalid("sample sizes below 32 are not supported"));
            }
        }
        for est in &self.estimators {
            est.validate()?;
        }
        if self.replications == 0 {
            return Err(Error::invalid("a study needs at least one replication"));
        }
        if self.replications > u32::MAX as usize {
            return Err(Error::invalid("replication count out of range"));
        }
        Ok(())
    }
}

/// Aggregated error statistics for one metric in one cell. Parameter metrics
/// aggregate signed errors; angle metrics aggregate sines (nonnegative, so
/// the root mean square is the quantity usually reported); extraction and
/// forecast metrics aggregate per-replication root mean squared errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Metric name: one of d, d1, d2, r, beta, theta1, theta2, x_rmse,
    /// forecast_rmse.
    pub metric: String,
    /// Root mean square of the per-replication values.
    pub rmse: f64,
    /// Mean of the per-replication values.
    pub bias: f64,
    /// Median of the per-replication values.
    pub median_error: f64,
    /// Number of replications entering the statistics.
    pub count: usize,
}

/// Results of one (design, sample size, estimator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    /// The design simulated in this cell.
    pub dgp: DgpSpec,
    /// Sample size.
    pub n: usize,
    /// The method these statistics describe.
    pub estimator: Estimator,
    /// Replications attempted.
    pub replications: usize,
    /// Replications whose estimate failed; excluded from the statistics.
    pub failures: usize,
    /// One summary per recorded metric.
    pub metrics: Vec<MetricSummary>,
    /// Wall time spent inside this cell's estimator calls. Excluded from
    /// serialized artifacts so reports stay byte-identical across runs.
    #[serde(skip)]
    pub seconds: f64,
}

impl CellReport {
    /// The summary for a named metric, if recorded.
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Full study output: one [`CellReport`] per (design, sample size,
/// applicable estimator) combination, in configuration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    /// Format tag, [`REPORT_SCHEMA`].
    pub schema: String,
    /// Label from the configuration.
    pub name: String,
    /// Master seed the study ran under.
    pub seed: u64,
    /// Replications per cell.
    pub replications: usize,
    /// Per-cell results.
    pub cells: Vec<CellReport>,
    /// Total wall time of the run. Excluded from serialized artifacts so
    /// reports stay byte-identical across runs.
    #[serde(skip)]
    pub seconds: f64,
}

impl StudyReport {
    /// The cell for a given design, size, and estimator, if present.
    pub fn cell(&self, dgp: &DgpSpec, n: usize, estimator: &Estimator) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.dgp == *dgp && c.n == n && c.estimator == *estimator)
    }

    /// Writes the report as JSON.
    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    /// Writes the report as CSV, one row per cell and metric, with floats at
    /// full round-trip precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "dgp",
            "n",
            "estimator",
            "metric",
            "rmse",
            "bias",
            "median_error",
            "count",
            "replications",
            "failures",
        ])?;
        for cell in &self.cells {
            for m in &cell.metrics {
                out.write_record([
                    cell.dgp.to_string(),
                    cell.n.to_string(),
                    cell.estimator.to_string(),
                    m.metric.clone(),
                    format_full(m.rmse),
                    format_full(m.bias),
                    format_full(m.median_error),
                    m.count.to_string(),
                    cell.replications.to_string(),
                    cell.failures.to_string(),
                ])?;
            }
        }
        out.flush().map_err(Error::Io)?;
        Ok(())
    }
}

/// Per-replication outcome for one estimator: recorded metric values, or
/// `None` when the estimate failed, plus the seconds spent.
type RepOutcome = (Option<Vec<(&'static str, f64)>>, f64);

/// Runs a replicated study. Every replication of a cell simulates one sample
/// shared by all estimators; replications are independent ChaCha streams
/// derived from the master seed and the (scenario, replication) pair, so
/// results do not depend on thread count or scheduling. Failed replications
/// are counted per cell and excluded from the statistics; they never abort
/// the study.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let started = Instant::now();
    let mut cells = Vec::new();
    let mut scenario_idx: u64 = 0;
    for dgp in &config.dgps {
        for &n in &config.sample_sizes {
            let active: Vec<&Estimator> = config
                .estimators
                .iter()
                .filter(|est| est.applies_to(dgp))
                .collect();
            let models: Vec<Option<FCModel>> = active
                .iter()
                .map(|est| est.model(dgp, n, config.table_dir.as_deref()))
                .collect::<Result<_>>()?;
            let n_total = n + config.horizon;
            let outcomes: Vec<Vec<RepOutcome>> = (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(scenario_idx << 32 | rep as u64);
                    let sample = match draw(dgp, n_total, &mut rng) {
                        Ok(sample) => sample,
                        Err(_) => return vec![(None, 0.0); active.len()],
                    };
                    active
                        .iter()
                        .zip(&models)
                        .map(|(est, model)| evaluate(est, model.as_ref(), dgp, n, config, &sample))
                        .collect()
                })
                .collect();
            for (j, est) in active.iter().enumerate() {
                cells.push(aggregate_cell(
                    dgp,
                    n,
                    est,
                    outcomes.iter().map(|rep| &rep[j]),
                ));
            }
            scenario_idx += 1;
        }
    }
    Ok(StudyReport {
        schema: REPORT_SCHEMA.into(),
        name: config.name.clone(),
        seed: config.seed,
        replications: config.replications,
        cells,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Collapses one cell's replication outcomes, in replication order, into the
/// reported statistics.
fn aggregate_cell<'a>(
    dgp: &DgpSpec,
    n: usize,
    estimator: &Estimator,
    outcomes: impl Iterator<Item = &'a RepOutcome>,
) -> CellReport {
    let mut failures = 0;
    let mut replications = 0;
    let mut seconds = 0.0;
    let mut values: Vec<(&'static str, Vec<f64>)> = Vec::new();
    for (metrics, secs) in outcomes {
        replications += 1;
        seconds += secs;
        match metrics {
            Some(metrics) => {
                for &(name, value) in metrics {
                    match values.iter_mut().find(|(n, _)| *n == name) {
                        Some((_, list)) => list.push(value),
                        None => values.push((name, vec![value])),
                    }
                }
            }
            None => failures += 1,
        }
    }
    let metrics = values
        .into_iter()
        .map(|(name, list)| summarize(name, list))
        .collect();
    CellReport {
        dgp: *dgp,
        n,
        estimator: *estimator,
        replications,
        failures,
        metrics,
        seconds,
    }
}

fn summarize(metric: &str, mut values: Vec<f64>) -> MetricSummary {
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    let msq = values.iter().map(|v| v * v).sum::<f64>() / count as f64;
    values.sort_by(f64::total_cmp);
    let median = if count % 2 == 1 {
        values[count / 2]
    } else {
        0.5 * (values[count / 2 - 1] + values[count / 2])
    };
    MetricSummary {
        metric: metric.to_string(),
        rmse: msq.sqrt(),
        bias: mean,
        median_error: median,
        count,
    }
}

fn evaluate(
    est: &Estimator,
    model: Option<&FCModel>,
    dgp: &DgpSpec,
    n: usize,
    config: &StudyConfig,
    sample: &DgpDraw,
) -> RepOutcome {
    let t0 = Instant::now();
    let result = match est {
        Estimator::Ew => ew_metrics(dgp, sample, n),
        Estimator::Nbls => nbls_metrics(dgp, sample, n),
        _ => ml_metrics(
            model.expect("likelihood estimators carry a model"),
            dgp,
            matches!(est, Estimator::RestrictedMl { .. }),
            n,
            config,
            sample,
        ),
    };
    (result.ok(), t0.elapsed().as_secs_f64())
}

/// Fits the likelihood model and records the design's parameter errors and
/// angle metrics, plus extraction and forecast errors when requested. Relies
/// on the canonical form of the fit: components labeled by decreasing memory
/// and loading columns signed positive, matching how the designs are
/// parameterized.
fn ml_metrics(
    model: &FCModel,
    dgp: &DgpSpec,
    restricted: bool,
    n: usize,
    config: &StudyConfig,
    sample: &DgpDraw,
) -> Result<Vec<(&'static str, f64)>> {
    let y = sample.y.head(n);
    let options = FitOptions {
        compute_covariance: false,
        ..FitOptions::default()
    };
    let fitted = fit(model, &y, &options)?;
    let th = &fitted.theta.0;
    let mut out = Vec::new();
    match *dgp {
        DgpSpec::Dgp1 { d, .. } => out.push(("d", th[0] - d)),
        DgpSpec::Dgp2 { d, .. } => {
            out.push(("d", th[0] - d));
            let (l11, l21) = (th[1], th[2]);
            let lambda = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
            let b_hat = DMatrix::from_column_slice(2, 1, &[l21, -l11]);
            out.push(("theta1", cointegration_angle(&lambda, &b_hat)?));
            out.push(("beta", l11 / l21 - 1.0));
        }
        DgpSpec::Dgp3 { a, d1, d2, r } => {
            out.push(("d1", th[0] - d1));
            out.push(("d2", th[1] - d2));
            let lam = [th[2], th[3], th[4], th[5]];
            let lambda1 = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
            let b1 = DMatrix::from_column_slice(2, 1, &[lam[1], -lam[0]]);
            out.push(("theta1", cointegration_angle(&lambda1, &b1)?));
            if restricted {
                if r == 1.0 {
                    // With one shared shock the augmented vector
                    // (y1, y2, Δ^{d1−d2} y2)′ loads on (x1, x2) through a
                    // 3×2 matrix whose null direction is the polynomial
                    // cointegration vector; the third row is (0, Λ21)
                    // because differencing y2 turns its x1 content into x2.
                    let truth = DMatrix::from_row_slice(3, 2, &[1.0, a, 1.0, -a, 0.0, 1.0]);
                    let c1 = [lam[0], lam[1], 0.0];
                    let c2 = [lam[2], lam[3], lam[1]];
                    let b2 = DMatrix::from_column_slice(3, 1, &cross(&c1, &c2));
                    out.push(("theta2", cointegration_angle(&truth, &b2)?));
                }
            } else {
                let r_hat = th[model.layout().corr_range().start];
                out.push(("r", r_hat - r));
            }
        }
        DgpSpec::Dgp4 { p, a, d1, d2 } => {
            out.push(("d1", th[0] - d1));
            out.push(("d2", th[1] - d2));
            let col1 = DMatrix::from_column_slice(p, 1, &th[2..2 + p]);
            let ones = DMatrix::from_element(p, 1, 1.0);
            let b1 = orth_complement(&col1)?;
            out.push(("theta1", cointegration_angle(&ones, &b1)?));
            if p > 2 {
                let lambda_hat = DMatrix::from_fn(p, 2, |i, j| th[2 + j * p + i]);
                let truth = DMatrix::from_fn(p, 2, |i, j| {
                    if j == 0 || i % 2 == 0 {
                        a
                    } else {
                        -a
                    }
                });
                let b2 = orth_complement(&lambda_hat)?;
                out.push(("theta2", cointegration_angle(&truth, &b2)?));
            }
        }
    }
    if config.smoothed_components || config.horizon > 0 {
        let system = model.assemble_system(&fitted.theta)?;
        if config.smoothed_components {
            let smooth = kalman_smooth(&system, &y)?;
            let xhat = model.extract_fractional(&smooth, &fitted.theta)?;
            let s = sample.x.ncols();
            let mut sq = 0.0;
            for t in 0..n {
                for j in 0..s {
                    let e = xhat.get(t, j) - sample.x.get(t, j);
                    sq += e * e;
                }
            }
            out.push(("x_rmse", (sq / (n * s) as f64).sqrt()));
        }
        if config.horizon > 0 {
            let predicted = forecast(&system, &y, config.horizon)?;
            let p_obs = sample.y.ncols();
            let mut sq = 0.0;
            for h in 0..config.horizon {
                for j in 0..p_obs {
                    let e = predicted.mean.get(h, j) - sample.y.get(n + h, j);
                    sq += e * e;
                }
            }
            out.push(("forecast_rmse", (sq / (config.horizon * p_obs) as f64).sqrt()));
        }
    }
    Ok(out)
}

/// Memory-order errors from the exact local Whittle estimator. Designs with
/// one order average the componentwise estimates; designs with two take the
/// larger order from the observables (all dominated by it) and the smaller
/// from narrow-band regression residuals, which cancel the dominant
/// component.
fn ew_metrics(dgp: &DgpSpec, sample: &DgpDraw, n: usize) -> Result<Vec<(&'static str, f64)>> {
    let m = WhittleConfig::default().bandwidth(n);
    let cols: Vec<Vec<f64>> = (0..sample.y.ncols())
        .map(|j| (0..n).map(|t| sample.y.get(t, j)).collect())
        .collect();
    match *dgp {
        DgpSpec::Dgp1 { d, .. } => Ok(vec![("d", exact_local_whittle(&cols[0], m)? - d)]),
        DgpSpec::Dgp2 { d, .. } => {
            let avg = 0.5 * (exact_local_whittle(&cols[0], m)? + exact_local_whittle(&cols[1], m)?);
            Ok(vec![("d", avg - d)])
        }
        DgpSpec::Dgp3 { d1, d2, .. } => {
            let dhat1 =
                0.5 * (exact_local_whittle(&cols[0], m)? + exact_local_whittle(&cols[1], m)?);
            let resid = nbls_residual(&cols[0], &cols[1], n)?;
            let dhat2 = exact_local_whittle(&resid, m)?;
            Ok(vec![("d1", dhat1 - d1), ("d2", dhat2 - d2)])
        }
        DgpSpec::Dgp4 { p, d1, d2, .. } => {
            let mut sum1 = 0.0;
            for col in &cols {
                sum1 += exact_local_whittle(col, m)?;
            }
            let mut sum2 = 0.0;
            for j in 1..p {
                let resid = nbls_residual(&cols[j], &cols[0], n)?;
                sum2 += exact_local_whittle(&resid, m)?;
            }
            Ok(vec![
                ("d1", sum1 / p as f64 - d1),
                ("d2", sum2 / (p - 1) as f64 - d2),
            ])
        }
    }
}

/// Cointegration metrics from narrow-band least squares under the (1, −β)
/// normalization.
fn nbls_metrics(dgp: &DgpSpec, sample: &DgpDraw, n: usize) -> Result<Vec<(&'static str, f64)>> {
    let m = nbls_bandwidth(n);
    let cols: Vec<Vec<f64>> = (0..sample.y.ncols())
        .map(|j| (0..n).map(|t| sample.y.get(t, j)).collect())
        .collect();
    match *dgp {
        DgpSpec::Dgp1 { .. } => Err(Error::invalid(
            "narrow-band regression needs at least two observables",
        )),
        DgpSpec::Dgp2 { .. } => {
            let beta = regress(&cols[0], &[&cols[1]], m)?[0];
            let lambda = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
            let b_hat = DMatrix::from_column_slice(2, 1, &[1.0, -beta]);
            Ok(vec![
                ("theta1", cointegration_angle(&lambda, &b_hat)?),
                ("beta", beta - 1.0),
            ])
        }
        DgpSpec::Dgp3 { a, r, .. } => {
            let beta = regress(&cols[0], &[&cols[1]], m)?[0];
            let lambda1 = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
            let b1 = DMatrix::from_column_slice(2, 1, &[1.0, -beta]);
            let mut out = vec![("theta1", cointegration_angle(&lambda1, &b1)?)];
            if r == 1.0 {
                // Polynomial cointegration: regress y1 on y2 and on y2
                // differenced by the estimated memory gap, then compare the
                // direction (1, −β̂1, −β̂2)′ with the augmented loading
                // space, exactly as for the restricted likelihood estimate.
                let whittle_m = WhittleConfig::default().bandwidth(n);
                let dhat1 = 0.5
                    * (exact_local_whittle(&cols[0], whittle_m)?
                        + exact_local_whittle(&cols[1], whittle_m)?);
                let resid: Vec<f64> = cols[0]
                    .iter()
                    .zip(&cols[1])
                    .map(|(a, b)| a - beta * b)
                    .collect();
                let dhat2 = exact_local_whittle(&resid, whittle_m)?;
                let shifted = fracdiff_slice(&cols[1], dhat1 - dhat2)?;
                let b = regress(&cols[0], &[&cols[1], &shifted], m)?;
                let truth = DMatrix::from_row_slice(3, 2, &[1.0, a, 1.0, -a, 0.0, 1.0]);
                let b2 = DMatrix::from_column_slice(3, 1, &[1.0, -b[0], -b[1]]);
                out.push(("theta2", cointegration_angle(&truth, &b2)?));
            }
            Ok(out)
        }
        DgpSpec::Dgp4 { p, a, .. } => {
            let ones = DMatrix::from_element(p, 1, 1.0);
            let mut b1 = DMatrix::zeros(p, p - 1);
            for j in 1..p {
                let beta = regress(&cols[j], &[&cols[0]], m)?[0];
                b1[(0, j - 1)] = -beta;
                b1[(j, j - 1)] = 1.0;
            }
            let mut out = vec![("theta1", cointegration_angle(&ones, &b1)?)];
            if p > 2 {
                let truth =
                    DMatrix::from_fn(p, 2, |i, j| if j == 0 || i % 2 == 0 { a } else { -a });
                let mut b2 = DMatrix::zeros(p, p - 2);
                for j in 2..p {
                    let b = regress(&cols[j], &[&cols[0], &cols[1]], m)?;
                    b2[(0, j - 2)] = -b[0];
                    b2[(1, j - 2)] = -b[1];
                    b2[(j, j - 2)] = 1.0;
                }
                out.push(("theta2", cointegration_angle(&truth, &b2)?));
            }
            Ok(out)
        }
    }
}

fn regress(y: &[f64], x: &[&Vec<f64>], m: usize) -> Result<Vec<f64>> {
    let names = (0..x.len()).map(|j| format!("x{}", j + 1)).collect();
    let cols: Vec<Vec<f64>> = x.iter().map(|c| (*c).clone()).collect();
    nbls(y, &Series::from_columns(names, &cols)?, m)
}

fn nbls_residual(y: &[f64], x: &[f64], n: usize) -> Result<Vec<f64>> {
    let beta = regress(y, &[&x.to_vec()], nbls_bandwidth(n))?[0];
    Ok(y.iter().zip(x).map(|(a, b)| a - beta * b).collect())
}

fn cross(u: &[f64; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> StudyConfig {
        StudyConfig {
            schema: STUDY_SCHEMA.into(),
            name: "tiny".into(),
            dgps: vec![DgpSpec::Dgp1 { q: 1.0, d: 0.4 }],
            sample_sizes: vec![96],
            estimators: vec![Estimator::MlMaTrunc { m: 6 }, Estimator::Ew],
            replications: 3,
            seed: 9,
            horizon: 4,
            smoothed_components: true,
            table_dir: None,
        }
    }

    #[test]
    fn studies_are_deterministic_and_thread_independent() {
        let config = tiny_config();
        let first = run_study(&config).unwrap();
        let second = run_study(&config).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap();
        let third = pool.install(|| run_study(&config)).unwrap();

        let as_json = |report: &StudyReport| serde_json::to_string(report).unwrap();
        assert_eq!(as_json(&first), as_json(&second));
        assert_eq!(as_json(&first), as_json(&third));

        assert_eq!(first.cells.len(), 2);
        let ml = &first.cells[0];
        assert_eq!(ml.estimator, Estimator::MlMaTrunc { m: 6 });
        assert_eq!(ml.replications, 3);
        assert_eq!(ml.failures, 0);
        for name in ["d", "x_rmse", "forecast_rmse"] {
            assert!(ml.metric(name).is_some(), "missing {name}");
        }
        let ew = &first.cells[1];
        assert!(ew.metric("d").is_some());

        for cell in &first.cells {
            for m in &cell.metrics {
                assert!(
                    m.rmse * m.rmse + 1e-15 >= m.bias * m.bias,
                    "rmse {} under bias {} for {}",
                    m.rmse,
                    m.bias,
                    m.metric
                );
                assert_eq!(m.count, 3);
            }
        }
    }

    #[test]
    fn inapplicable_estimators_leave_no_cell() {
        let config = StudyConfig {
            schema: STUDY_SCHEMA.into(),
            name: "skip".into(),
            dgps: vec![
                DgpSpec::Dgp1 { q: 1.0, d: 0.4 },
                DgpSpec::Dgp2 {
                    c: 2.0,
                    e: 0.0,
                    d: 0.6,
                },
            ],
            sample_sizes: vec![128],
            estimators: vec![Estimator::Ew, Estimator::Nbls],
            replications: 2,
            seed: 4,
            horizon: 0,
            smoothed_components: false,
            table_dir: None,
        };
        let report = run_study(&config).unwrap();
        assert_eq!(report.cells.len(), 3);
        assert!(report
            .cell(&config.dgps[0], 128, &Estimator::Nbls)
            .is_none());
        let nb = report
            .cell(&config.dgps[1], 128, &Estimator::Nbls)
            .expect("narrow-band cell");
        assert!(nb.metric("theta1").is_some());
        assert!(nb.metric("beta").is_some());
    }

    #[test]
    fn reports_round_trip_through_json_and_csv() {
        let config = StudyConfig {
            replications: 2,
            horizon: 0,
            smoothed_components: false,
            ..tiny_config()
        };
        let report = run_study(&config).unwrap();

        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let parsed: StudyReport = serde_json::from_slice(&json).unwrap();
        let mut reserialized = Vec::new();
        parsed.write_json(&mut reserialized).unwrap();
        assert_eq!(json, reserialized);
        assert_eq!(parsed.schema, REPORT_SCHEMA);

        let mut csv_bytes = Vec::new();
        report.write_csv(&mut csv_bytes).unwrap();
        let mut reader = csv::Reader::from_reader(csv_bytes.as_slice());
        assert_eq!(
            reader.headers().unwrap(),
            &csv::StringRecord::from(vec![
                "dgp",
                "n",
                "estimator",
                "metric",
                "rmse",
                "bias",
                "median_error",
                "count",
                "replications",
                "failures"
            ])
        );
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        let n_metrics: usize = report.cells.iter().map(|c| c.metrics.len()).sum();
        assert_eq!(rows.len(), n_metrics);
        assert_eq!(&rows[0][0], report.cells[0].dgp.to_string());
        let first_rmse: f64 = rows[0][4].parse().unwrap();
        assert_eq!(first_rmse, report.cells[0].metrics[0].rmse);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let good = tiny_config();
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.schema = "nope".into();
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.estimators.clear();
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.sample_sizes = vec![16];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.replications = 0;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.estimators = vec![Estimator::MlArma { v: 0, w: 2 }];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn estimators_parse_from_their_method_tags() {
        let parsed: Vec<Estimator> = serde_json::from_str(
            r#"[{"method":"ml-arma","v":3,"w":3},{"method":"ml-ar-trunc","m":50},
                {"method":"ml-ma-trunc","m":50},{"method":"ew"},{"method":"nbls"},
                {"method":"restricted-ml","v":3,"w":3}]"#,
        )
        .unwrap();
        assert_eq!(parsed.len(), 6);
        assert_eq!(parsed[0], Estimator::MlArma { v: 3, w: 3 });
        assert_eq!(parsed[5].to_string(), "restricted-ml(3,3)");
        assert!(parsed[5].applies_to(&DgpSpec::Dgp3 {
            a: 2.0,
            d1: 0.8,
            d2: 0.2,
            r: 1.0
        }));
        assert!(!parsed[5].applies_to(&DgpSpec::Dgp1 { q: 1.0, d: 0.5 }));
        assert!(!parsed[4].applies_to(&DgpSpec::Dgp1 { q: 1.0, d: 0.5 }));
    }
}
