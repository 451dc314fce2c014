//! Per-subcommand configuration and execution.

use std::collections::HashSet;

use outlierseq_core::analytics::detector_floor;
use outlierseq_core::montecarlo::OutlierPlacement;
use outlierseq_core::{
    estimate_error_curve, exponent_report, fit_exponent, kl_estimator, DetectionResult, DetectorKind, DistributionSpec,
    Error, ErrorCurve, ExperimentConfig, ExponentFit, ExponentReport, KernelSpec, MmdReference, PartitionSchedule,
    PreparedDetector, SequenceBatch,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{parse_sequences, Layout};

fn default_pi() -> DistributionSpec {
    DistributionSpec::gaussian(0.0, 1.0)
}

fn default_mu() -> DistributionSpec {
    DistributionSpec::gaussian(0.0, 2.0)
}

fn default_gamma() -> f64 {
    1.0
}

fn check_gamma(field: &str, gamma: f64) -> CliResult<KernelSpec> {
    let kernel = KernelSpec::gaussian(gamma);
    kernel.validate(field)?;
    Ok(kernel)
}

fn check_schedule(field: &str, schedule: PartitionSchedule) -> CliResult<()> {
    match schedule {
        PartitionSchedule::FixedCells(0) | PartitionSchedule::FixedPoints(0) => {
            Err(CliError::invalid(field, "must be >= 1"))
        }
        _ => Ok(()),
    }
}

fn check_pair(pi: &DistributionSpec, mu: &DistributionSpec) -> CliResult<()> {
    pi.validate("pi")?;
    mu.validate("mu")?;
    if pi == mu {
        return Err(CliError::invalid("mu", "must differ from pi"));
    }
    Ok(())
}

/// A detector entry. `ml` without `mu` takes the outlier law of the
/// experiment (or scenario) it runs in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSpec {
    Kl {
        #[serde(default)]
        schedule: PartitionSchedule,
    },
    Mmd {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Ml {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<DistributionSpec>,
    },
}

impl DetectorSpec {
    pub fn resolve(&self, field: &str, outlier: Option<&DistributionSpec>) -> CliResult<DetectorKind> {
        match *self {
            DetectorSpec::Kl { schedule } => {
                check_schedule(&format!("{field}.schedule"), schedule)?;
                Ok(DetectorKind::Kl { schedule })
            }
            DetectorSpec::Mmd { gamma } => Ok(DetectorKind::Mmd {
                kernel: check_gamma(&format!("{field}.gamma"), gamma)?,
            }),
            DetectorSpec::Ml { mu } => {
                let mu = mu
                    .or(outlier.copied())
                    .ok_or_else(|| CliError::invalid(format!("{field}.mu"), "required for the ml detector"))?;
                mu.validate(&format!("{field}.mu"))?;
                Ok(DetectorKind::Ml { mu })
            }
        }
    }
}

// ----------------------------------------------------------------------------
// estimate-kl / estimate-mmd

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateKlConfig {
    pub pi: DistributionSpec,
    pub schedule: PartitionSchedule,
    /// Floor for reference cell masses; 0 disables clamping.
    pub clamp_cell_mass: f64,
    pub layout: Layout,
}

impl Default for EstimateKlConfig {
    fn default() -> Self {
        EstimateKlConfig {
            pi: default_pi(),
            schedule: PartitionSchedule::SqrtN,
            clamp_cell_mass: 0.0,
            layout: Layout::Rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub index: usize,
    pub n: usize,
    pub cells: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub pi: DistributionSpec,
    pub schedule: PartitionSchedule,
    /// False when cell masses were clamped; such estimates are exploratory.
    pub certified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_cell_mass: Option<f64>,
    pub estimates: Vec<KlEstimate>,
}

pub fn estimate_kl(config: &EstimateKlConfig, text: &str) -> CliResult<KlReport> {
    config.pi.validate("pi")?;
    check_schedule("schedule", config.schedule)?;
    let delta = config.clamp_cell_mass;
    if !(delta == 0.0 || (delta > 0.0 && delta < 1.0)) {
        return Err(CliError::invalid("clamp_cell_mass", "must be 0 (off) or lie in (0, 1)"));
    }
    let samples = parse_sequences(text, config.layout)?;
    let mut estimates = Vec::with_capacity(samples.len());
    for (index, sample) in samples.iter().enumerate() {
        let value = if delta > 0.0 {
            kl_estimator::estimate_kl_clamped(sample, &config.pi, config.schedule, delta)
        } else {
            kl_estimator::estimate_kl(sample, &config.pi, config.schedule)
        };
        let estimate = value.map_err(|e| e.at_index(index))?;
        let (_, cells) = config.schedule.shape(sample.len()).map_err(|e| e.at_index(index))?;
        estimates.push(KlEstimate {
            index,
            n: sample.len(),
            cells,
            estimate,
        });
    }
    Ok(KlReport {
        pi: config.pi,
        schedule: config.schedule,
        certified: delta == 0.0,
        clamp_cell_mass: (delta > 0.0).then_some(delta),
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateMmdConfig {
    pub pi: DistributionSpec,
    pub gamma: f64,
    pub layout: Layout,
}

impl Default for EstimateMmdConfig {
    fn default() -> Self {
        EstimateMmdConfig {
            pi: default_pi(),
            gamma: default_gamma(),
            layout: Layout::Rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    pub index: usize,
    pub n: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    pub pi: DistributionSpec,
    pub kernel: KernelSpec,
    pub estimates: Vec<MmdEstimate>,
}

pub fn estimate_mmd(config: &EstimateMmdConfig, text: &str) -> CliResult<MmdReport> {
    config.pi.validate("pi")?;
    let kernel = check_gamma("gamma", config.gamma)?;
    let samples = parse_sequences(text, config.layout)?;
    let reference = MmdReference::new(kernel, config.pi);
    let estimates = samples
        .iter()
        .enumerate()
        .map(|(index, sample)| {
            let estimate = reference.statistic(sample).map_err(|e| e.at_index(index))?;
            Ok(MmdEstimate {
                index,
                n: sample.len(),
                estimate,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(MmdReport {
        pi: config.pi,
        kernel,
        estimates,
    })
}

/// Write estimate rows as CSV with shortest round-trip floats.
pub fn estimates_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::runtime(e.to_string());
    out.write_record(header).map_err(fail)?;
    for row in rows {
        out.write_record(&row).map_err(fail)?;
    }
    out.into_inner().map_err(|e| CliError::runtime(e.to_string()))
}

// ----------------------------------------------------------------------------
// detect

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub pi: DistributionSpec,
    pub detector: DetectorSpec,
    pub layout: Layout,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            pi: default_pi(),
            detector: DetectorSpec::Kl {
                schedule: PartitionSchedule::SqrtN,
            },
            layout: Layout::Rows,
        }
    }
}

pub fn detect(config: &DetectConfig, text: &str) -> CliResult<DetectionResult> {
    config.pi.validate("pi")?;
    let kind = config.detector.resolve("detector", None)?;
    let batch = SequenceBatch::new(parse_sequences(text, config.layout)?)
        .map_err(|e| CliError::invalid("input", e.to_string()))?;
    if let DetectorKind::Kl { schedule } = kind {
        schedule
            .shape(batch.sequence_len())
            .map_err(|e| CliError::invalid("detector.schedule", e.to_string()))?;
    }
    Ok(PreparedDetector::new(&config.pi, &kind).detect(&batch)?)
}

// ----------------------------------------------------------------------------
// analyze

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub pi: DistributionSpec,
    pub mu: DistributionSpec,
    pub gamma: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            pi: default_pi(),
            mu: default_mu(),
            gamma: default_gamma(),
        }
    }
}

pub fn analyze(config: &AnalyzeConfig) -> CliResult<ExponentReport> {
    check_pair(&config.pi, &config.mu)?;
    check_gamma("gamma", config.gamma)?;
    Ok(exponent_report(&config.pi, &config.mu, config.gamma))
}

// ----------------------------------------------------------------------------
// simulate

/// An alternative outlier law run with the same detectors and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mu: DistributionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub m: usize,
    pub n_grid: Vec<usize>,
    pub trials: u64,
    pub seed: u64,
    pub min_errors_for_fit: u64,
    pub outlier_placement: OutlierPlacement,
    pub pi: DistributionSpec,
    pub mu: DistributionSpec,
    pub detectors: Vec<DetectorSpec>,
    pub scenarios: Vec<Scenario>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        SimulateConfig {
            m: base.m,
            n_grid: base.n_grid,
            trials: base.trials,
            seed: base.seed,
            min_errors_for_fit: base.min_errors_for_fit,
            outlier_placement: base.outlier_placement,
            pi: base.pi,
            mu: base.mu,
            detectors: vec![
                DetectorSpec::Kl {
                    schedule: PartitionSchedule::SqrtN,
                },
                DetectorSpec::Mmd { gamma: default_gamma() },
            ],
            scenarios: Vec::new(),
        }
    }
}

/// One experiment to run: an optional scenario name and its engine config.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub scenario: Option<String>,
    pub config: ExperimentConfig,
}

impl SimulateConfig {
    fn experiment(&self, mu: DistributionSpec, n_grid: Vec<usize>) -> CliResult<ExperimentConfig> {
        let detectors = self
            .detectors
            .iter()
            .enumerate()
            .map(|(i, d)| d.resolve(&format!("detectors[{i}]"), Some(&mu)))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(ExperimentConfig {
            m: self.m,
            n_grid,
            trials: self.trials,
            pi: self.pi,
            mu,
            detectors,
            seed: self.seed,
            outlier_placement: self.outlier_placement,
            min_errors_for_fit: self.min_errors_for_fit,
        })
    }

    /// Validate everything and expand scenarios into engine configs.
    pub fn experiments(&self) -> CliResult<Vec<Experiment>> {
        let base = self.experiment(self.mu, self.n_grid.clone())?;
        base.validate()?;
        if self.scenarios.is_empty() {
            return Ok(vec![Experiment {
                scenario: None,
                config: base,
            }]);
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.scenarios.len());
        for (i, s) in self.scenarios.iter().enumerate() {
            let field = |name: &str| format!("scenarios[{i}].{name}");
            if s.name.trim().is_empty() || s.name.contains([',', '"', '\n']) {
                return Err(CliError::invalid(
                    field("name"),
                    "must be non-empty without commas or quotes",
                ));
            }
            if !seen.insert(s.name.as_str()) {
                return Err(CliError::invalid(
                    field("name"),
                    format!("duplicate scenario {:?}", s.name),
                ));
            }
            let grid = s.n_grid.clone().unwrap_or_else(|| self.n_grid.clone());
            let config = self.experiment(s.mu, grid)?;
            config.validate().map_err(|e| match e {
                Error::ConfigInvalid { field: f, reason } if f == "mu" || f == "n_grid" => {
                    CliError::invalid(field(&f), reason)
                }
                Error::ConfigInvalid { field: f, reason } => {
                    CliError::invalid(f, format!("{reason} (scenario {:?})", s.name))
                }
                other => other.into(),
            })?;
            out.push(Experiment {
                scenario: Some(s.name.clone()),
                config,
            });
        }
        Ok(out)
    }
}

/// A fitted exponent, or why the fit was not possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub detector: String,
    pub fit: Option<ExponentFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub curve: ErrorCurve,
    pub fits: Vec<FitEntry>,
}

fn scenario_curve(curve: &ErrorCurve, scenario: Option<&str>) -> ErrorCurve {
    ErrorCurve {
        rows: curve
            .rows
            .iter()
            .filter(|r| r.scenario.as_deref() == scenario)
            .cloned()
            .collect(),
    }
}

fn fit_entry(curve: &ErrorCurve, scenario: Option<&str>, detector: &str, floor: f64, min_errors: u64) -> FitEntry {
    let sub = scenario_curve(curve, scenario);
    let (fit, error) = match fit_exponent(&sub, detector, floor, min_errors) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    FitEntry {
        scenario: scenario.map(str::to_string),
        detector: detector.to_string(),
        fit,
        error,
    }
}

/// Run every experiment. Call inside [`outlierseq_core::with_threads`] to
/// bound parallelism.
pub fn simulate(config: &SimulateConfig) -> CliResult<ErrorCurve> {
    let mut curve = ErrorCurve::default();
    for exp in config.experiments()? {
        let part = estimate_error_curve(&exp.config)?;
        curve.rows.extend(part.rows.into_iter().map(|r| match &exp.scenario {
            Some(name) => r.with_scenario(name.clone()),
            None => r,
        }));
    }
    Ok(curve)
}

/// Exponent fits for every experiment and detector of a simulated curve,
/// each with its theoretical floor.
pub fn simulate_fits(config: &SimulateConfig, curve: &ErrorCurve) -> CliResult<Vec<FitEntry>> {
    let mut fits = Vec::new();
    for exp in config.experiments()? {
        for kind in &exp.config.detectors {
            let floor = detector_floor(&exp.config.pi, &exp.config.mu, kind);
            fits.push(fit_entry(
                curve,
                exp.scenario.as_deref(),
                &kind.label(),
                floor,
                config.min_errors_for_fit,
            ));
        }
    }
    Ok(fits)
}

// ----------------------------------------------------------------------------
// fit-exponent

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Detector label to fit; empty fits every detector in the input.
    pub detector: String,
    /// Scenario to fit; empty fits every scenario in the input.
    pub scenario: String,
    pub floor: f64,
    pub min_errors_for_fit: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            detector: String::new(),
            scenario: String::new(),
            floor: 0.0,
            min_errors_for_fit: ExperimentConfig::default().min_errors_for_fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fits: Vec<FitEntry>,
}

/// Parse an error curve from `simulate` output: CSV, the JSON report, or a
/// bare JSON curve.
pub fn parse_curve(text: &str) -> CliResult<ErrorCurve> {
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::invalid("input", format!("invalid JSON: {e}")))?;
        let curve = match value {
            serde_json::Value::Object(mut map) if map.contains_key("curve") => map.remove("curve").unwrap_or_default(),
            other => other,
        };
        serde_json::from_value(curve).map_err(|e| CliError::invalid("input", format!("not an error curve: {e}")))
    } else {
        Ok(ErrorCurve::read_csv(text.as_bytes())?)
    }
}

fn unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    items.filter(|s| seen.insert(*s)).collect()
}

pub fn fit(config: &FitConfig, text: &str) -> CliResult<FitReport> {
    if !config.floor.is_finite() {
        return Err(CliError::invalid("floor", "must be finite"));
    }
    let curve = parse_curve(text)?;
    let scenarios: Vec<Option<&str>> = if config.scenario.is_empty() {
        let mut seen = HashSet::new();
        curve
            .rows
            .iter()
            .map(|r| r.scenario.as_deref())
            .filter(|s| seen.insert(*s))
            .collect()
    } else {
        if !curve
            .rows
            .iter()
            .any(|r| r.scenario.as_deref() == Some(config.scenario.as_str()))
        {
            return Err(CliError::invalid(
                "scenario",
                format!("no rows for scenario {:?}", config.scenario),
            ));
        }
        vec![Some(config.scenario.as_str())]
    };
    let mut fits = Vec::new();
    for scenario in scenarios {
        let sub = scenario_curve(&curve, scenario);
        let detectors = if config.detector.is_empty() {
            unique(sub.rows.iter().map(|r| r.detector.as_str()))
        } else {
            vec![config.detector.as_str()]
        };
        for detector in detectors {
            fits.push(fit_entry(
                &sub,
                scenario,
                detector,
                config.floor,
                config.min_errors_for_fit,
            ));
        }
    }
    if !config.detector.is_empty()
        && fits.iter().all(|f| f.fit.is_none())
        && !curve.rows.iter().any(|r| r.detector == config.detector)
    {
        return Err(CliError::invalid(
            "detector",
            format!("no rows for detector {:?}", config.detector),
        ));
    }
    if fits.is_empty() {
        return Err(CliError::invalid("input", "no rows"));
    }
    if fits.iter().all(|f| f.fit.is_none()) {
        let reasons: Vec<&str> = fits.iter().filter_map(|f| f.error.as_deref()).collect();
        return Err(CliError::runtime(reasons.join("; ")));
    }
    Ok(FitReport { fits })
}

pub fn fits_csv(fits: &[FitEntry]) -> CliResult<Vec<u8>> {
    let header = [
        "scenario",
        "detector",
        "exponent",
        "intercept",
        "r_squared",
        "theoretical_floor",
        "meets_floor",
        "rows_used",
        "min_errors",
        "error",
    ];
    let rows = fits.iter().map(|f| {
        let mut row = vec![f.scenario.clone().unwrap_or_default(), f.detector.clone()];
        match &f.fit {
            Some(x) => row.extend([
                x.exponent().to_string(),
                x.intercept.to_string(),
                x.r_squared.to_string(),
                x.theoretical_floor.to_string(),
                x.meets_floor().to_string(),
                x.rows_used.to_string(),
                x.min_errors.to_string(),
                String::new(),
            ]),
            None => {
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(f.error.clone().unwrap_or_default());
            }
        }
        row
    });
    estimates_csv(&header, rows)
}

// ----------------------------------------------------------------------------
// help notes

pub const DISTRIBUTION_NOTE: &str = "\
Distributions: { kind = \"gaussian\", mean = M, variance = V }
               { kind = \"truncated_gaussian\", mean = M, variance = V, lower = A, upper = B }
               { kind = \"uniform\", lower = A, upper = B }
";

pub const DETECTOR_NOTE: &str = "\
Detectors:     { kind = \"kl\", schedule = \"sqrt_n\" | { fixed_cells = T } | { fixed_points = L } }
               { kind = \"mmd\", gamma = G }
               { kind = \"ml\", mu = <distribution> }   (mu defaults to the outlier law in simulate)
";

pub const SCENARIO_NOTE: &str = "\
Scenarios:     { name = \"label\", mu = <distribution>, n_grid = [..] }   (n_grid optional)
Placement:     outlier_placement = \"uniform\" | { fixed = I }
";
