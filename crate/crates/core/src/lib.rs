//! Universal outlying-sequence detection.
//!
//! Given `M` sequences where all but one are drawn from a known typical law
//! `pi` and one comes from an unknown outlier law `mu`, the detectors here
//! pick the sequence that looks least like `pi`. The crate provides the
//! partition-based KL estimator, an unbiased kernel MMD estimator, the
//! detectors built on them, closed-form reference quantities, and a seeded,
//! thread-count independent Monte Carlo engine.

pub mod analytics;
pub mod detectors;
pub mod distributions;
pub mod error;
pub mod kl_estimator;
pub mod mmd;
pub mod montecarlo;
pub mod quadrature;
pub mod rng;

pub use analytics::{detector_floor, exponent_report, ExponentReport};
pub use detectors::{detect, DetectionResult, DetectorKind, PreparedDetector, SequenceBatch};
pub use distributions::{density_ratio_bounds, DensityRatioBounds, DistributionSpec, ExtReal};
pub use error::{Error, Result};
pub use kl_estimator::{estimate_kl, PartitionSchedule};
pub use mmd::{mmd2_unbiased, KernelSpec, MmdReference};
pub use montecarlo::{
    estimate_error_curve, fit_exponent, run_trial, with_threads, ErrorCurve, ErrorRow, ExperimentConfig, ExponentFit,
    OutlierPlacement, TrialOutcome,
};
