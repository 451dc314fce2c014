//! Shared fixtures for the criterion benchmarks.

use outlierseq_core::rng::replicate_stream;
use outlierseq_core::DistributionSpec;

/// A reproducible sample of size `n` from `spec`.
pub fn sample(spec: &DistributionSpec, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = replicate_stream(seed, n, 0);
    spec.sample(n, &mut rng)
}

pub fn standard_normal() -> DistributionSpec {
    DistributionSpec::gaussian(0.0, 1.0)
}
