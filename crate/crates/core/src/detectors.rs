//! Outlying-sequence detection rules.
//!
//! Each rule scores every sequence and picks the highest score. The
//! universal rules (KL and MMD) only ever see `pi`; the likelihood-ratio rule
//! additionally needs the outlier law `mu` and serves as the oracle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, ExtReal};
use crate::error::{Error, Result};
use crate::kl_estimator::{estimate_kl, PartitionSchedule};
use crate::mmd::{KernelSpec, MmdReference};

/// `M >= 2` sequences of a common length `n >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    sequences: Vec<Vec<f64>>,
}

impl SequenceBatch {
    pub fn new(sequences: Vec<Vec<f64>>) -> Result<Self> {
        if sequences.len() < 2 {
            return Err(Error::param(
                "sequences",
                format!("need at least 2 sequences, got {}", sequences.len()),
            ));
        }
        let n = sequences[0].len();
        if n < 2 {
            return Err(Error::param("sequences", format!("need length >= 2, got {n}")));
        }
        if let Some(i) = sequences.iter().position(|s| s.len() != n) {
            return Err(Error::param(
                "sequences",
                format!(
                    "sequence {i} has length {} but sequence 0 has length {n}",
                    sequences[i].len()
                ),
            ));
        }
        Ok(SequenceBatch { sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequence_len(&self) -> usize {
        self.sequences[0].len()
    }

    pub fn sequences(&self) -> &[Vec<f64>] {
        &self.sequences
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.sequences
    }
}

/// Which statistic scores the sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorKind {
    /// Average log-likelihood ratio; needs the outlier law.
    Ml { mu: DistributionSpec },
    /// Partition KL estimate against `pi`.
    Kl {
        #[serde(default)]
        schedule: PartitionSchedule,
    },
    /// Unbiased squared MMD against `pi`.
    Mmd {
        #[serde(default)]
        kernel: KernelSpec,
    },
}

impl DetectorKind {
    /// Stable text label: `ml`, `kl:sqrt_n`, `kl:cells=8`, `mmd:gamma=1`.
    pub fn label(&self) -> String {
        match self {
            DetectorKind::Ml { .. } => "ml".to_string(),
            DetectorKind::Kl { schedule } => format!("kl:{}", schedule.label()),
            DetectorKind::Mmd { kernel } => format!("mmd:gamma={}", kernel.gamma()),
        }
    }

    pub fn is_universal(&self) -> bool {
        !matches!(self, DetectorKind::Ml { .. })
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Outcome of one detection: the chosen sequence (0-based) and all scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub chosen_index: usize,
    pub scores: Vec<ExtReal>,
    pub detector: DetectorKind,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[ExtReal]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if s.total_cmp(&scores[b]) == std::cmp::Ordering::Greater => best = Some(i),
            _ => {}
        }
    }
    best
}

/// `L = (1/n) sum ln(mu(y)/pi(y))`.
///
/// Fails with [`Error::InvalidLikelihood`] if either density vanishes at an
/// observation.
pub fn score_ml(seq: &[f64], pi: &DistributionSpec, mu: &DistributionSpec) -> Result<f64> {
    let mut total = 0.0;
    for (index, &y) in seq.iter().enumerate() {
        let (lm, lp) = (mu.ln_pdf(y), pi.ln_pdf(y));
        if lm == f64::NEG_INFINITY || lp == f64::NEG_INFINITY || !y.is_finite() {
            return Err(Error::InvalidLikelihood {
                index,
                value: y,
                reason: format!("density is zero (mu {}, pi {})", lm.exp(), lp.exp()),
            });
        }
        total += lm - lp;
    }
    Ok(total / seq.len() as f64)
}

/// [`score_ml`] with the disjoint-support markers: `-inf` if `mu` vanishes at
/// some observation, `+inf` if `pi` does. A sequence that hits both (or a
/// non-finite observation) is still an error.
pub fn score_ml_marked(seq: &[f64], pi: &DistributionSpec, mu: &DistributionSpec) -> Result<ExtReal> {
    let mut mu_zero = None;
    let mut pi_zero = None;
    let mut total = 0.0;
    for (index, &y) in seq.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::InvalidLikelihood {
                index,
                value: y,
                reason: "observation is not finite".to_string(),
            });
        }
        let (lm, lp) = (mu.ln_pdf(y), pi.ln_pdf(y));
        if lm == f64::NEG_INFINITY {
            mu_zero.get_or_insert(index);
        }
        if lp == f64::NEG_INFINITY {
            pi_zero.get_or_insert(index);
        }
        total += lm - lp;
    }
    match (mu_zero, pi_zero) {
        (Some(a), Some(b)) => {
            let index = a.max(b);
            Err(Error::InvalidLikelihood {
                index,
                value: seq[index],
                reason: "sequence has points outside both supports".to_string(),
            })
        }
        (Some(_), None) => Ok(ExtReal::NegInf),
        (None, Some(_)) => Ok(ExtReal::PosInf),
        (None, None) => Ok(ExtReal::Finite(total / seq.len() as f64)),
    }
}

/// A detector bound to `pi`, with any per-`pi` work done up front.
#[derive(Debug, Clone)]
pub enum PreparedDetector {
    Ml {
        pi: DistributionSpec,
        mu: DistributionSpec,
    },
    Kl {
        pi: DistributionSpec,
        schedule: PartitionSchedule,
    },
    Mmd(MmdReference<KernelSpec>),
}

impl PreparedDetector {
    pub fn new(pi: &DistributionSpec, kind: &DetectorKind) -> Self {
        match *kind {
            DetectorKind::Ml { mu } => PreparedDetector::Ml { pi: *pi, mu },
            DetectorKind::Kl { schedule } => PreparedDetector::Kl { pi: *pi, schedule },
            DetectorKind::Mmd { kernel } => PreparedDetector::Mmd(MmdReference::new(kernel, *pi)),
        }
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            PreparedDetector::Ml { mu, .. } => DetectorKind::Ml { mu: *mu },
            PreparedDetector::Kl { schedule, .. } => DetectorKind::Kl { schedule: *schedule },
            PreparedDetector::Mmd(r) => DetectorKind::Mmd { kernel: *r.kernel() },
        }
    }

    pub fn score(&self, seq: &[f64]) -> Result<ExtReal> {
        match self {
            PreparedDetector::Ml { pi, mu } => score_ml_marked(seq, pi, mu),
            PreparedDetector::Kl { pi, schedule } => estimate_kl(seq, pi, *schedule).map(ExtReal::Finite),
            PreparedDetector::Mmd(r) => r.statistic(seq).map(ExtReal::Finite),
        }
    }

    pub fn detect(&self, batch: &SequenceBatch) -> Result<DetectionResult> {
        detect_with(batch, self.kind(), |s| self.score(s))
    }
}

/// Score every sequence with `scorer` and take the argmax.
pub fn detect_with(
    batch: &SequenceBatch,
    detector: DetectorKind,
    scorer: impl Fn(&[f64]) -> Result<ExtReal>,
) -> Result<DetectionResult> {
    let scores = batch
        .sequences()
        .iter()
        .enumerate()
        .map(|(i, s)| scorer(s).map_err(|e| e.at_index(i)))
        .collect::<Result<Vec<_>>>()?;
    let chosen_index = argmax_lowest(&scores).expect("batch holds at least two sequences");
    Ok(DetectionResult {
        chosen_index,
        scores,
        detector,
    })
}

/// Apply `detector` with typical law `pi`.
pub fn detect(batch: &SequenceBatch, pi: &DistributionSpec, detector: &DetectorKind) -> Result<DetectionResult> {
    PreparedDetector::new(pi, detector).detect(batch)
}

/// Universal KL rule: pick the sequence farthest from `pi` in estimated KL.
pub fn detect_kl(batch: &SequenceBatch, pi: &DistributionSpec, schedule: PartitionSchedule) -> Result<DetectionResult> {
    detect(batch, pi, &DetectorKind::Kl { schedule })
}

/// Universal MMD rule.
pub fn detect_mmd(batch: &SequenceBatch, pi: &DistributionSpec, kernel: KernelSpec) -> Result<DetectionResult> {
    detect(batch, pi, &DetectorKind::Mmd { kernel })
}

/// Likelihood-ratio rule with both laws known.
pub fn detect_ml(batch: &SequenceBatch, pi: &DistributionSpec, mu: &DistributionSpec) -> Result<DetectionResult> {
    detect(batch, pi, &DetectorKind::Ml { mu: *mu })
}
