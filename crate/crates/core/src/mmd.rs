//! Unbiased squared maximum mean discrepancy between a sample and a known
//! distribution.
//!
//! ```text
//! MMD2_u[X, q] = 1/(n(n-1)) sum_{i != j} k(x_i, x_j) + E[k(Y, Y')] - 2/n sum_i E[k(x_i, Y)]
//! ```
//!
//! with `Y, Y'` independent draws from `q`. Both expectations over `q` are
//! evaluated exactly (closed forms for the Gaussian kernel), so the only
//! randomness is the sample itself.

use serde::{Deserialize, Serialize};

use crate::distributions::{std_normal_mass, DistributionSpec};
use crate::error::{Error, Result};
use crate::quadrature;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// A bounded, symmetric kernel whose expectations against a
/// [`DistributionSpec`] can be computed.
pub trait Kernel {
    fn eval(&self, x: f64, y: f64) -> f64;

    /// `E[k(x, Y)]` for `Y ~ q`.
    fn mean_against(&self, x: f64, q: &DistributionSpec) -> f64;

    /// `E[k(Y, Y')]` for independent `Y, Y' ~ q`.
    fn double_mean(&self, q: &DistributionSpec) -> f64;

    /// The constant `K` with `0 <= k(x, y) <= K`.
    fn sup_bound(&self) -> f64;

    /// `sum_{i < j} k(x_i, x_j)`.
    fn pair_sum(&self, sample: &[f64]) -> f64 {
        let mut acc = Neumaier::default();
        for (i, &x) in sample.iter().enumerate() {
            let row: f64 = sample[i + 1..].iter().map(|&y| self.eval(x, y)).sum();
            acc.add(row);
        }
        acc.total()
    }
}

/// Kernel selection. Only the Gaussian kernel ships.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `k(x, y) = exp(-(x - y)^2 / (2 gamma^2))`, bounded by 1.
    Gaussian { gamma: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { gamma: 1.0 }
    }
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec::Gaussian { gamma }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            KernelSpec::Gaussian { gamma } => gamma,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let gamma = self.gamma();
        if gamma.is_finite() && gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::config(field, "must be a finite number > 0"))
        }
    }
}

impl Kernel for KernelSpec {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let gamma = self.gamma();
        let d = x - y;
        (-d * d / (2.0 * gamma * gamma)).exp()
    }

    fn mean_against(&self, x: f64, q: &DistributionSpec) -> f64 {
        let g2 = self.gamma() * self.gamma();
        match *q {
            DistributionSpec::Gaussian { mean, variance } => {
                let s = g2 + variance;
                let d = x - mean;
                (g2 / s).sqrt() * (-d * d / (2.0 * s)).exp()
            }
            DistributionSpec::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => {
                // Kernel times density is a Gaussian in y; integrate it over
                // the window and renormalize by the truncated mass.
                let s = g2 + variance;
                let d = x - mean;
                let scale = (g2 / s).sqrt() * (-d * d / (2.0 * s)).exp();
                let centre = (mean * g2 + x * variance) / s;
                let sd = (variance * g2 / s).sqrt();
                let inside = std_normal_mass((lower - centre) / sd, (upper - centre) / sd);
                let sd_q = variance.sqrt();
                let z = std_normal_mass((lower - mean) / sd_q, (upper - mean) / sd_q);
                scale * inside / z
            }
            DistributionSpec::Uniform { lower, upper } => {
                let gamma = self.gamma();
                gamma * SQRT_2PI / (upper - lower) * std_normal_mass((lower - x) / gamma, (upper - x) / gamma)
            }
        }
    }

    fn double_mean(&self, q: &DistributionSpec) -> f64 {
        let gamma = self.gamma();
        let g2 = gamma * gamma;
        match *q {
            DistributionSpec::Gaussian { variance, .. } => (g2 / (g2 + 2.0 * variance)).sqrt(),
            DistributionSpec::Uniform { lower, upper } => {
                // (2/w^2) * integral_0^w (w - t) k(t) dt
                let w = upper - lower;
                let u = w / gamma;
                let linear = w * gamma * SQRT_2PI * 0.5 * libm::erf(u / std::f64::consts::SQRT_2);
                let quadratic = -g2 * (-0.5 * u * u).exp_m1();
                2.0 * (linear - quadratic) / (w * w)
            }
            DistributionSpec::TruncatedGaussian { lower, upper, .. } => {
                quadrature::integrate(|y| q.pdf(y) * self.mean_against(y, q), lower, upper, 1e-13)
            }
        }
    }

    fn sup_bound(&self) -> f64 {
        1.0
    }

    fn pair_sum(&self, sample: &[f64]) -> f64 {
        let gamma = self.gamma();
        if sample.len() >= SERIES_MIN_LEN {
            if let Some(v) = gaussian_pair_sum_series(sample, gamma) {
                return v;
            }
        }
        gaussian_pair_sum_direct(sample, gamma)
    }
}

/// Samples shorter than this use the direct double loop.
const SERIES_MIN_LEN: usize = 48;
/// Largest squared half-range (in units of gamma) handled by the series.
const SERIES_MAX_SPREAD: f64 = 64.0;
/// Per-pair truncation error of the series.
const SERIES_TAIL: f64 = 1e-18;

fn gaussian_pair_sum_direct(sample: &[f64], gamma: f64) -> f64 {
    let scale = -1.0 / (2.0 * gamma * gamma);
    let mut acc = Neumaier::default();
    for (i, &x) in sample.iter().enumerate() {
        let rest = &sample[i + 1..];
        let mut lanes = [0.0f64; 4];
        let chunks = rest.chunks_exact(4);
        let tail = chunks.remainder();
        for c in chunks {
            for (lane, &y) in lanes.iter_mut().zip(c) {
                let d = x - y;
                *lane += (scale * d * d).exp();
            }
        }
        for &y in tail {
            let d = x - y;
            lanes[0] += (scale * d * d).exp();
        }
        acc.add((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]));
    }
    acc.total()
}

/// Smallest `K` with `P(Poisson(t) > K) <= SERIES_TAIL`.
fn poisson_cutoff(t: f64) -> usize {
    let hi = (t + 12.0 * t.sqrt() + 60.0).ceil() as usize;
    let mut pmf = Vec::with_capacity(hi + 1);
    let mut p = (-t).exp();
    for k in 0..=hi {
        pmf.push(p);
        p *= t / (k + 1) as f64;
    }
    let mut tail = 0.0;
    for k in (0..hi).rev() {
        tail += pmf[k + 1];
        if tail > SERIES_TAIL {
            return k + 1;
        }
    }
    0
}

/// `sum_{i<j} exp(-(x_i - x_j)^2 / (2 gamma^2))` in `O(n K)`.
///
/// With `z = (x - c) / gamma` and `w = exp(-z^2 / 2)`,
/// `sum_{i,j} k(x_i, x_j) = sum_{i,j} w_i w_j exp(z_i z_j)
///                        = sum_k (sum_i w_i z_i^k / sqrt(k!))^2`,
/// a series of non-negative terms. Each pair's truncated remainder is at most
/// `P(Poisson(|z_i z_j|) > K)`, which is bounded through the largest `|z|`.
/// Returns `None` when the sample is too spread out for a short series.
fn gaussian_pair_sum_series(sample: &[f64], gamma: f64) -> Option<f64> {
    let (lo, hi) = sample
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo) / gamma;
    let t = half * half;
    if t.is_nan() || t > SERIES_MAX_SPREAD {
        return None;
    }
    let cutoff = poisson_cutoff(t);
    let z: Vec<f64> = sample.iter().map(|&x| (x - centre) / gamma).collect();
    let mut p: Vec<f64> = z.iter().map(|&v| (-0.5 * v * v).exp()).collect();
    let mut total = Neumaier::default();
    for k in 0..=cutoff {
        let mut lanes = [0.0f64; 4];
        let chunks = p.chunks_exact(4);
        let rest = chunks.remainder();
        for c in chunks {
            for (lane, &v) in lanes.iter_mut().zip(c) {
                *lane += v;
            }
        }
        for &v in rest {
            lanes[0] += v;
        }
        let m = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        total.add(m * m);
        let f = 1.0 / ((k + 1) as f64).sqrt();
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi *= zi * f;
        }
    }
    Some(0.5 * (total.total() - sample.len() as f64))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Neumaier {
    sum: f64,
    compensation: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// A kernel paired with the reference distribution, with `E[k(Y, Y')]`
/// computed once so many samples can be scored against the same `q`.
#[derive(Debug, Clone)]
pub struct MmdReference<K> {
    kernel: K,
    q: DistributionSpec,
    self_term: f64,
}

impl<K: Kernel> MmdReference<K> {
    pub fn new(kernel: K, q: DistributionSpec) -> Self {
        let self_term = kernel.double_mean(&q);
        MmdReference { kernel, q, self_term }
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    /// The unbiased statistic for `sample`; needs at least two points.
    pub fn statistic(&self, sample: &[f64]) -> Result<f64> {
        let n = sample.len();
        if n < 2 {
            return Err(Error::SampleTooSmall(format!("MMD statistic needs n >= 2, got {n}")));
        }
        if let Some(i) = sample.iter().position(|x| !x.is_finite()) {
            return Err(Error::param(
                "sample",
                format!("observation {i} is not finite ({})", sample[i]),
            ));
        }
        // Summing in sorted order makes the value independent of input order.
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let nf = n as f64;
        let within = 2.0 * self.kernel.pair_sum(&sorted) / (nf * (nf - 1.0));
        let mut cross = Neumaier::default();
        for &x in &sorted {
            cross.add(self.kernel.mean_against(x, &self.q));
        }
        Ok(within + self.self_term - 2.0 * cross.total() / nf)
    }
}

/// `k(x, y)` for the given kernel.
pub fn kernel_eval(kernel: &KernelSpec, x: f64, y: f64) -> f64 {
    kernel.eval(x, y)
}

/// `E[k(x, Y)]`, `Y ~ q`.
pub fn kernel_mean_vs_dist(kernel: &KernelSpec, x: f64, q: &DistributionSpec) -> f64 {
    kernel.mean_against(x, q)
}

/// `E[k(Y, Y')]`, `Y, Y' ~ q` independent.
pub fn kernel_double_mean(kernel: &KernelSpec, q: &DistributionSpec) -> f64 {
    kernel.double_mean(q)
}

/// Unbiased `MMD^2` between `sample` and `q`. May be negative.
pub fn mmd2_unbiased(sample: &[f64], q: &DistributionSpec, kernel: &KernelSpec) -> Result<f64> {
    MmdReference::new(*kernel, *q).statistic(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Midpoint-free composite Simpson, independent of the crate quadrature.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut s = f(a) + f(b);
        for i in 1..panels {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn families() -> Vec<DistributionSpec> {
        vec![
            DistributionSpec::gaussian(0.0, 1.0),
            DistributionSpec::gaussian(1.0, 0.3),
            DistributionSpec::truncated_gaussian(0.0, 1.0, -2.0, 2.0),
            DistributionSpec::truncated_gaussian(0.5, 2.0, 1.0, 3.0),
            DistributionSpec::uniform(-1.0, 2.0),
        ]
    }

    #[test]
    fn kernel_values() {
        let k = KernelSpec::gaussian(1.0);
        assert_eq!(kernel_eval(&k, 0.3, 0.3), 1.0);
        assert!(close(kernel_eval(&k, 0.0, 1.0), 0.606_530_7, 1e-7));
        assert!(close(
            kernel_eval(&KernelSpec::gaussian(2.0), 0.0, 2.0),
            0.606_530_7,
            1e-7
        ));
        assert_eq!(kernel_eval(&k, 1.0, -2.0), kernel_eval(&k, -2.0, 1.0));
    }

    #[test]
    fn mean_against_examples() {
        let k = KernelSpec::gaussian(1.0);
        let q = DistributionSpec::gaussian(0.0, 1.0);
        assert!(close(
            kernel_mean_vs_dist(&k, 0.0, &q),
            std::f64::consts::FRAC_1_SQRT_2,
            1e-7
        ));
        assert!(close(kernel_mean_vs_dist(&k, 3.0, &q), 0.074_528_51, 1e-8));
        let point = DistributionSpec::gaussian(0.4, 1e-12);
        assert!(close(
            kernel_mean_vs_dist(&k, 1.1, &point),
            kernel_eval(&k, 1.1, 0.4),
            1e-11
        ));
    }

    #[test]
    fn mean_against_matches_quadrature() {
        for gamma in [0.5, 1.0, 3.0] {
            let k = KernelSpec::gaussian(gamma);
            for q in families() {
                let (lo, hi) = q.mass_window();
                for x in [-2.5, -0.2, 0.0, 1.3, 4.0] {
                    let oracle = simpson(|y| k.eval(x, y) * q.pdf(y), lo, hi, 20_000);
                    let v = kernel_mean_vs_dist(&k, x, &q);
                    assert!(close(v, oracle, 1e-10), "{q} gamma {gamma} x {x}: {v} vs {oracle}");
                }
            }
        }
    }

    #[test]
    fn double_mean_examples() {
        let k = KernelSpec::gaussian(1.0);
        assert!(close(
            kernel_double_mean(&k, &DistributionSpec::gaussian(0.0, 1.0)),
            0.577_350_3,
            1e-7
        ));
        assert!(close(
            kernel_double_mean(&k, &DistributionSpec::gaussian(0.0, 2.0)),
            0.447_213_6,
            1e-7
        ));
        let flat = KernelSpec::gaussian(1e6);
        for q in families() {
            assert!(close(kernel_double_mean(&flat, &q), 1.0, 1e-9), "{q}");
        }
    }

    #[test]
    fn double_mean_matches_quadrature() {
        for gamma in [0.5, 1.0, 3.0] {
            let k = KernelSpec::gaussian(gamma);
            for q in families() {
                let (lo, hi) = q.mass_window();
                let oracle = simpson(
                    |x| q.pdf(x) * simpson(|y| k.eval(x, y) * q.pdf(y), lo, hi, 2_000),
                    lo,
                    hi,
                    2_000,
                );
                let v = kernel_double_mean(&k, &q);
                assert!(close(v, oracle, 1e-8), "{q} gamma {gamma}: {v} vs {oracle}");
            }
        }
    }

    #[test]
    fn two_point_hand_value() {
        let k = KernelSpec::gaussian(1.0);
        let q = DistributionSpec::gaussian(0.0, 1.0);
        let v = mmd2_unbiased(&[0.0, 1.0], &q, &k).unwrap();
        let expected =
            (-0.5f64).exp() + 1.0 / 3f64.sqrt() - (1.0 / 2f64.sqrt() + (1.0 / 2f64.sqrt()) * (-0.25f64).exp());
        assert!(close(v, expected, 1e-15));
        assert!(close(v, -0.073_921_1, 1e-7));
    }

    struct Constant(f64);

    impl Kernel for Constant {
        fn eval(&self, _: f64, _: f64) -> f64 {
            self.0
        }
        fn mean_against(&self, _: f64, _: &DistributionSpec) -> f64 {
            self.0
        }
        fn double_mean(&self, _: &DistributionSpec) -> f64 {
            self.0
        }
        fn sup_bound(&self) -> f64 {
            self.0
        }
    }

    #[test]
    fn constant_kernel_cancels() {
        let r = MmdReference::new(Constant(0.7), DistributionSpec::gaussian(0.0, 1.0));
        let v = r.statistic(&[0.1, 5.0, -3.0, 2.2]).unwrap();
        assert!(v.abs() < 1e-15, "{v}");
    }

    #[test]
    fn fast_pair_sum_matches_generic() {
        struct Plain(KernelSpec);
        impl Kernel for Plain {
            fn eval(&self, x: f64, y: f64) -> f64 {
                self.0.eval(x, y)
            }
            fn mean_against(&self, x: f64, q: &DistributionSpec) -> f64 {
                self.0.mean_against(x, q)
            }
            fn double_mean(&self, q: &DistributionSpec) -> f64 {
                self.0.double_mean(q)
            }
            fn sup_bound(&self) -> f64 {
                1.0
            }
        }
        let k = KernelSpec::gaussian(0.8);
        let xs = DistributionSpec::gaussian(0.0, 2.0).sample(301, &mut ChaCha8Rng::seed_from_u64(3));
        let a = k.pair_sum(&xs);
        let b = Plain(k).pair_sum(&xs);
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn series_pair_sum_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut cases: Vec<(Vec<f64>, f64)> = vec![
            (DistributionSpec::gaussian(0.0, 1.0).sample(200, &mut rng), 1.0),
            (DistributionSpec::gaussian(3.0, 0.01).sample(64, &mut rng), 1.0),
            (DistributionSpec::uniform(-8.0, 8.0).sample(500, &mut rng), 1.0),
            (DistributionSpec::uniform(0.0, 1.0).sample(100, &mut rng), 0.07),
            (vec![2.5; 60], 1.0),
        ];
        let mut clusters = DistributionSpec::gaussian(-6.0, 0.1).sample(50, &mut rng);
        clusters.extend(DistributionSpec::gaussian(6.0, 0.1).sample(50, &mut rng));
        cases.push((clusters, 1.0));
        cases.push((vec![-7.9, 7.9, 0.0, 1.0, -1.0, 7.0, -7.0, 3.0], 1.0));
        for (xs, gamma) in cases {
            let direct = gaussian_pair_sum_direct(&xs, gamma);
            let series = gaussian_pair_sum_series(&xs, gamma).expect("spread within range");
            assert!(
                (series - direct).abs() <= 1e-13 * direct.max(1.0),
                "{series} vs {direct}"
            );
        }
        assert!(gaussian_pair_sum_series(&[0.0, 17.0], 1.0).is_none());
    }

    #[test]
    fn poisson_cutoff_bounds_the_tail() {
        assert_eq!(poisson_cutoff(0.0), 0);
        for t in [0.5, 4.0, 25.0, 64.0] {
            let k = poisson_cutoff(t);
            // Tail beyond k via direct summation of the pmf.
            let mut p = (-t).exp();
            let mut tail = 0.0;
            for j in 0..400 {
                if j > k {
                    tail += p;
                }
                p *= t / (j + 1) as f64;
            }
            assert!(tail <= SERIES_TAIL && k > t as usize, "t={t} k={k} tail={tail}");
        }
    }

    #[test]
    fn too_small_sample() {
        let q = DistributionSpec::gaussian(0.0, 1.0);
        assert!(matches!(
            mmd2_unbiased(&[1.0], &q, &KernelSpec::default()),
            Err(Error::SampleTooSmall(_))
        ));
    }

    #[test]
    fn large_sample_approaches_population_value() {
        let xs = DistributionSpec::gaussian(0.0, 2.0).sample(10_000, &mut ChaCha8Rng::seed_from_u64(17));
        let v = mmd2_unbiased(&xs, &DistributionSpec::gaussian(0.0, 1.0), &KernelSpec::default()).unwrap();
        assert!(close(v, 0.024_563_86, 0.01), "{v}");
    }

    #[test]
    fn unbiased_under_the_null() {
        let q = DistributionSpec::gaussian(0.0, 1.0);
        let r = MmdReference::new(KernelSpec::default(), q);
        let reps = 10_000;
        let values: Vec<f64> = (0..reps)
            .map(|i| {
                let xs = q.sample(100, &mut crate::rng::replicate_stream(808, 100, i));
                r.statistic(&xs).unwrap()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / reps as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let se = (var / reps as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_bounded(seed in any::<u64>(), n in 2usize..120, var in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = DistributionSpec::gaussian(0.0, 1.0);
            let k = KernelSpec::default();
            let mut xs = DistributionSpec::gaussian(0.3, var).sample(n, &mut rng);
            let a = mmd2_unbiased(&xs, &q, &k).unwrap();
            xs.shuffle(&mut rng);
            let b = mmd2_unbiased(&xs, &q, &k).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!(a <= 2.0 * k.sup_bound() && a >= -2.0 * k.sup_bound());
        }
    }
}
