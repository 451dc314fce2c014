//! Seeded Monte Carlo estimation of detector error probabilities.
//!
//! A trial draws the outlier position, samples `m - 1` sequences from `pi`
//! and one from `mu`, and runs a detector. Each trial reads its own keyed
//! random stream (see [`crate::rng`]), and the only cross-trial reduction is
//! an integer error count, so an [`ErrorCurve`] is byte-identical for any
//! thread count.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{DetectorKind, PreparedDetector, SequenceBatch};
use crate::distributions::{DistributionSpec, ExtReal};
use crate::error::{Error, Result};
use crate::kl_estimator::PartitionSchedule;
use crate::mmd::KernelSpec;
use crate::rng::trial_stream;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Where the outlying sequence sits in each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierPlacement {
    /// Uniform over `0..m`, drawn from the trial stream.
    #[default]
    Uniform,
    /// Always at the given 0-based index.
    Fixed(usize),
}

fn default_min_errors() -> u64 {
    10
}

/// One Monte Carlo study: every detector at every sample size in `n_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n_grid: Vec<usize>,
    pub trials: u64,
    pub pi: DistributionSpec,
    pub mu: DistributionSpec,
    pub detectors: Vec<DetectorKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outlier_placement: OutlierPlacement,
    #[serde(default = "default_min_errors")]
    pub min_errors_for_fit: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 5,
            n_grid: vec![50, 100, 150, 200],
            trials: 1000,
            pi: DistributionSpec::gaussian(0.0, 1.0),
            mu: DistributionSpec::gaussian(0.0, 2.0),
            detectors: vec![
                DetectorKind::Kl {
                    schedule: PartitionSchedule::SqrtN,
                },
                DetectorKind::Mmd {
                    kernel: KernelSpec::default(),
                },
            ],
            seed: 0,
            outlier_placement: OutlierPlacement::Uniform,
            min_errors_for_fit: default_min_errors(),
        }
    }
}

impl ExperimentConfig {
    /// Check every range and cross-field constraint. Errors are
    /// [`Error::ConfigInvalid`] with the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::config("m", format!("must be >= 2, got {}", self.m)));
        }
        if self.n_grid.is_empty() {
            return Err(Error::config("n_grid", "must not be empty"));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return Err(Error::config("n_grid", format!("sample sizes must be >= 2, got {n}")));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("n_grid", "must be strictly increasing"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        self.pi.validate("pi")?;
        self.mu.validate("mu")?;
        if self.mu == self.pi {
            return Err(Error::config("mu", "must differ from pi"));
        }
        if self.detectors.is_empty() {
            return Err(Error::config("detectors", "must not be empty"));
        }
        for (i, d) in self.detectors.iter().enumerate() {
            match d {
                DetectorKind::Ml { mu } => mu.validate(&format!("detectors[{i}].mu"))?,
                DetectorKind::Kl { schedule } => {
                    for &n in &self.n_grid {
                        schedule.shape(n).map_err(|e| {
                            Error::config(&format!("detectors[{i}].schedule"), format!("at n = {n}: {e}"))
                        })?;
                    }
                }
                DetectorKind::Mmd { kernel } => kernel.validate(&format!("detectors[{i}].kernel.gamma"))?,
            }
        }
        if let OutlierPlacement::Fixed(index) = self.outlier_placement {
            if index >= self.m {
                return Err(Error::config(
                    "outlier_placement",
                    format!("fixed index {index} must be < m = {}", self.m),
                ));
            }
        }
        Ok(())
    }
}

/// Result of a single trial. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub correct: bool,
    pub chosen: usize,
    pub truth: usize,
}

/// Stream family for a detector: a hash of its label, so adding or reordering
/// detectors in a config leaves the other detectors' trials unchanged.
fn detector_family(detector: &DetectorKind) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in detector.label().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h as usize
}

fn trial_with(
    config: &ExperimentConfig,
    prepared: &PreparedDetector,
    family: usize,
    n: usize,
    trial_index: u64,
) -> Result<TrialOutcome> {
    let mut rng = trial_stream(config.seed, family, n, trial_index);
    let truth = match config.outlier_placement {
        OutlierPlacement::Uniform => rng.random_range(0..config.m),
        OutlierPlacement::Fixed(i) => i,
    };
    let sequences = (0..config.m)
        .map(|i| {
            let law = if i == truth { &config.mu } else { &config.pi };
            law.sample(n, &mut rng)
        })
        .collect();
    let batch = SequenceBatch::new(sequences)?;
    let chosen = prepared.detect(&batch)?.chosen_index;
    Ok(TrialOutcome {
        correct: chosen == truth,
        chosen,
        truth,
    })
}

/// Run one trial. Deterministic in `(config.seed, detector, n, trial_index)`.
pub fn run_trial(
    config: &ExperimentConfig,
    detector: &DetectorKind,
    n: usize,
    trial_index: u64,
) -> Result<TrialOutcome> {
    let prepared = PreparedDetector::new(&config.pi, detector);
    trial_with(config, &prepared, detector_family(detector), n, trial_index)
}

/// One `(detector, n)` cell of an error curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub detector: String,
    pub n: usize,
    pub trials: u64,
    pub errors: u64,
    pub pe_hat: f64,
    pub log_pe: ExtReal,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ErrorRow {
    pub fn new(detector: impl Into<String>, n: usize, trials: u64, errors: u64) -> Self {
        assert!(trials > 0 && errors <= trials, "errors must be in 0..=trials");
        let pe_hat = errors as f64 / trials as f64;
        let (ci_low, ci_high) = wilson_interval(errors, trials, Z_95);
        ErrorRow {
            scenario: None,
            detector: detector.into(),
            n,
            trials,
            errors,
            pe_hat,
            log_pe: if errors == 0 {
                ExtReal::NegInf
            } else {
                ExtReal::Finite(pe_hat.ln())
            },
            ci_low,
            ci_high,
        }
    }

    pub fn with_scenario(mut self, scenario: impl Into<String>) -> Self {
        self.scenario = Some(scenario.into());
        self
    }
}

/// Wilson score interval for `errors` successes out of `trials`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if errors == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (low.min(p), high.max(p))
}

const CSV_COLUMNS: [&str; 8] = [
    "detector", "n", "trials", "errors", "pe_hat", "log_pe", "ci_low", "ci_high",
];

/// Estimated error probabilities for every `(detector, n)` cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub rows: Vec<ErrorRow>,
}

impl ErrorCurve {
    /// Rows belonging to one detector label, in `n` order.
    pub fn rows_for<'a>(&'a self, detector: &'a str) -> impl Iterator<Item = &'a ErrorRow> + 'a {
        self.rows.iter().filter(move |r| r.detector == detector)
    }

    pub fn row(&self, detector: &str, n: usize) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.detector == detector && r.n == n)
    }

    /// Write as CSV. A leading `scenario` column appears when any row has one.
    /// Floats use the shortest text that parses back to the same value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let with_scenario = self.rows.iter().any(|r| r.scenario.is_some());
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Input(e.to_string());
        let mut header: Vec<&str> = Vec::with_capacity(9);
        if with_scenario {
            header.push("scenario");
        }
        header.extend(CSV_COLUMNS);
        out.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec: Vec<String> = Vec::with_capacity(9);
            if with_scenario {
                rec.push(r.scenario.clone().unwrap_or_default());
            }
            rec.extend([
                r.detector.clone(),
                r.n.to_string(),
                r.trials.to_string(),
                r.errors.to_string(),
                r.pe_hat.to_string(),
                r.log_pe.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
            ]);
            out.write_record(&rec).map_err(io)?;
        }
        out.flush().map_err(|e| Error::Input(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    /// Parse CSV produced by [`ErrorCurve::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let headers = reader.headers().map_err(|e| Error::Input(e.to_string()))?.clone();
        let offset = match headers.get(0) {
            Some("scenario") => 1,
            _ => 0,
        };
        let expected: Vec<&str> = CSV_COLUMNS.to_vec();
        let got: Vec<&str> = headers.iter().skip(offset).collect();
        if got != expected {
            return Err(Error::Input(format!(
                "unexpected CSV header {:?}, expected {:?}",
                headers.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
            let field = |i: usize| rec.get(i + offset).unwrap_or("");
            let bad = |col: &str, v: &str| Error::Input(format!("row {}: bad {col} value {v:?}", line + 1));
            let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(CSV_COLUMNS[i], field(i)));
            let real = |i: usize| field(i).parse::<f64>().map_err(|_| bad(CSV_COLUMNS[i], field(i)));
            let log_pe = match field(5) {
                "-inf" => ExtReal::NegInf,
                "inf" => ExtReal::PosInf,
                v => ExtReal::Finite(v.parse::<f64>().map_err(|_| bad("log_pe", v))?),
            };
            let trials = int(2)?;
            let errors = int(3)?;
            if errors > trials {
                return Err(bad("errors", field(3)));
            }
            rows.push(ErrorRow {
                scenario: (offset == 1).then(|| rec.get(0).unwrap_or("").to_string()),
                detector: field(0).to_string(),
                n: int(1)? as usize,
                trials,
                errors,
                pe_hat: real(4)?,
                log_pe,
                ci_low: real(6)?,
                ci_high: real(7)?,
            });
        }
        Ok(ErrorCurve { rows })
    }
}

#[derive(Default)]
struct Tally {
    errors: u64,
    first_failure: Option<(u64, Error)>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.errors += other.errors;
        self.first_failure = match (self.first_failure, other.first_failure) {
            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
            (a, b) => a.or(b),
        };
        self
    }
}

/// Count detection errors over `trials` trials of one `(detector, n)` cell.
/// Runs on the current rayon pool.
fn count_errors(config: &ExperimentConfig, detector: &DetectorKind, n: usize) -> Result<u64> {
    let prepared = PreparedDetector::new(&config.pi, detector);
    let family = detector_family(detector);
    let tally = (0..config.trials)
        .into_par_iter()
        .fold(Tally::default, |mut acc, t| {
            if acc.first_failure.is_none() {
                match trial_with(config, &prepared, family, n, t) {
                    Ok(o) => acc.errors += u64::from(!o.correct),
                    Err(e) => acc.first_failure = Some((t, e)),
                }
            }
            acc
        })
        .reduce(Tally::default, Tally::merge);
    match tally.first_failure {
        // Another worker may have stopped early; rescan so the reported trial
        // is always the lowest failing index.
        Some((t, _)) => {
            for s in 0..=t {
                trial_with(config, &prepared, family, n, s).map_err(|e| Error::TrialFailed {
                    detector: detector.label(),
                    n,
                    trial: s,
                    source: Box::new(e),
                })?;
            }
            unreachable!("trial {t} failed once and must fail again")
        }
        None => Ok(tally.errors),
    }
}

/// Estimate the error probability of every detector at every `n`.
///
/// Rows are ordered by detector (config order) and then by `n`. Parallelism
/// comes from the ambient rayon pool; see [`with_threads`].
pub fn estimate_error_curve(config: &ExperimentConfig) -> Result<ErrorCurve> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.detectors.len() * config.n_grid.len());
    for detector in &config.detectors {
        for &n in &config.n_grid {
            let errors = count_errors(config, detector, n)?;
            rows.push(ErrorRow::new(detector.label(), n, config.trials, errors));
        }
    }
    Ok(ErrorCurve { rows })
}

/// Run `f` on a dedicated pool of `threads` workers (0 means one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Least-squares fit of `ln pe_hat` against `n` for one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub detector: String,
    /// Fitted exponent: the negated slope of `ln pe_hat` in `n`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub theoretical_floor: f64,
    pub rows_used: usize,
    pub min_errors: u64,
}

impl ExponentFit {
    pub fn exponent(&self) -> f64 {
        self.slope
    }

    pub fn meets_floor(&self) -> bool {
        self.slope >= self.theoretical_floor
    }
}

/// Fit `ln pe_hat = intercept - slope * n` over the rows of `detector` that
/// have at least `min_errors` errors (and at least one).
pub fn fit_exponent(curve: &ErrorCurve, detector: &str, floor: f64, min_errors: u64) -> Result<ExponentFit> {
    let usable: Vec<(f64, f64)> = curve
        .rows_for(detector)
        .filter(|r| r.errors >= min_errors.max(1))
        .map(|r| (r.n as f64, r.pe_hat.ln()))
        .collect();
    let total = curve.rows_for(detector).count();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "detector {detector}: {} of {total} rows have >= {min_errors} errors, need 3",
            usable.len()
        )));
    }
    let k = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / k;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(format!(
            "detector {detector}: all usable rows share one sample size"
        )));
    }
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let ss_res: f64 = usable.iter().map(|p| (p.1 - intercept - beta * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(ExponentFit {
        detector: detector.to_string(),
        slope: -beta,
        intercept,
        r_squared,
        theoretical_floor: floor,
        rows_used: usable.len(),
        min_errors,
    })
}
