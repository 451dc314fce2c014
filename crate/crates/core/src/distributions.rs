//! Univariate continuous distributions used as the typical (`pi`) and
//! outlier (`mu`) laws.
//!
//! Every family exposes its density, cdf, survival function and quantile
//! in closed form. Sampling always goes through the inverse cdf of an open
//! uniform variate, so all families consume exactly one `u64` per draw and
//! a seeded stream produces the same values on every platform.

use std::fmt;

use libm::erfc;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// ln(sqrt(2 pi))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A real number or one of the two infinities, used for interval endpoints
/// and for the ML detector's disjoint-support markers.
///
/// Serialized as a plain number when finite and as the strings `"-inf"` /
/// `"inf"` otherwise, so JSON output never contains non-standard literals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// The value as an `f64`, mapping the markers to the float infinities.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(x) => x,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    /// Inverse of [`ExtReal::to_f64`]. NaN is rejected.
    pub fn from_f64(x: f64) -> Option<Self> {
        if x.is_nan() {
            None
        } else if x == f64::INFINITY {
            Some(ExtReal::PosInf)
        } else if x == f64::NEG_INFINITY {
            Some(ExtReal::NegInf)
        } else {
            Some(ExtReal::Finite(x))
        }
    }

    /// Total order; finite values compare with `f64::total_cmp`.
    pub fn total_cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering::*;
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.total_cmp(b),
            (a, b) => {
                let rank = |v: &ExtReal| match v {
                    ExtReal::NegInf => 0,
                    ExtReal::Finite(_) => 1,
                    ExtReal::PosInf => 2,
                };
                match rank(a).cmp(&rank(b)) {
                    Equal => Equal,
                    o => o,
                }
            }
        }
    }
}

impl From<f64> for ExtReal {
    fn from(x: f64) -> Self {
        ExtReal::Finite(x)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => f.write_str("-inf"),
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::PosInf => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::NegInf => serializer.serialize_str("-inf"),
            ExtReal::Finite(x) => serializer.serialize_f64(*x),
            ExtReal::PosInf => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(x) => ExtReal::from_f64(x).ok_or_else(|| serde::de::Error::custom("NaN is not an extended real")),
            Raw::Text(s) => match s.as_str() {
                "-inf" => Ok(ExtReal::NegInf),
                "inf" | "+inf" => Ok(ExtReal::PosInf),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, \"-inf\" or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Standard normal helpers

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal cdf, via the complementary error function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal survival function `1 - cdf(z)`, accurate in the upper tail.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Standard normal quantile. The rational `erfc_inv` starting point is
/// only good to ~1e-10 relative, so one Newton step on the cdf (or the
/// survival function in the upper half) follows.
pub fn std_normal_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    if u < 0.5 {
        let z = -SQRT_2 * erfc_inv(2.0 * u);
        z - (std_normal_cdf(z) - u) / std_normal_pdf(z)
    } else {
        std_normal_isf(1.0 - u)
    }
}

/// Inverse of [`std_normal_sf`]: the `z` with `sf(z) = p`.
pub fn std_normal_isf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::INFINITY;
    }
    if p >= 1.0 {
        return f64::NEG_INFINITY;
    }
    if p > 0.5 {
        return -std_normal_isf(1.0 - p);
    }
    let z = SQRT_2 * erfc_inv(2.0 * p);
    z + (std_normal_sf(z) - p) / std_normal_pdf(z)
}

/// `P(lo < Z <= hi)` for a standard normal, using whichever tail keeps the
/// subtraction well conditioned.
pub(crate) fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return 0.0;
    }
    if lo > 0.0 {
        (std_normal_sf(lo) - std_normal_sf(hi)).max(0.0)
    } else {
        (std_normal_cdf(hi) - std_normal_cdf(lo)).max(0.0)
    }
}

/// Uniform variate in the open interval (0, 1) built from the top 53 bits.
pub fn open_unit(rng: &mut impl RngCore) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    ((rng.next_u64() >> 11) as f64 + 0.5) * SCALE
}

// ---------------------------------------------------------------------------
// DistributionSpec

/// A named continuous distribution.
///
/// Parses from `{"kind":"gaussian","mean":0,"variance":1}`,
/// `{"kind":"truncated_gaussian","mean":0,"variance":1,"lower":-2,"upper":2}`
/// or `{"kind":"uniform","lower":0,"upper":1}` (or the TOML equivalents).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// A Gaussian restricted to the closed interval `[lower, upper]`.
    TruncatedGaussian {
        mean: f64,
        variance: f64,
        lower: f64,
        upper: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::Gaussian { mean, variance } => write!(f, "N({mean},{variance})"),
            DistributionSpec::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => write!(f, "TN({mean},{variance},[{lower},{upper}])"),
            DistributionSpec::Uniform { lower, upper } => write!(f, "U({lower},{upper})"),
        }
    }
}

/// Normalizing data for a truncated Gaussian, computed once per use.
#[derive(Debug, Clone, Copy)]
struct Truncation {
    mean: f64,
    sd: f64,
    alpha: f64,
    beta: f64,
    /// Mass of the parent Gaussian inside the truncation interval.
    z: f64,
}

impl Truncation {
    fn new(mean: f64, variance: f64, lower: f64, upper: f64) -> Self {
        let sd = variance.sqrt();
        let alpha = (lower - mean) / sd;
        let beta = (upper - mean) / sd;
        Truncation {
            mean,
            sd,
            alpha,
            beta,
            z: std_normal_mass(alpha, beta),
        }
    }

    fn cdf_std(&self, zx: f64) -> f64 {
        if zx <= self.alpha {
            0.0
        } else if zx >= self.beta {
            1.0
        } else {
            (std_normal_mass(self.alpha, zx) / self.z).min(1.0)
        }
    }

    fn sf_std(&self, zx: f64) -> f64 {
        if zx <= self.alpha {
            1.0
        } else if zx >= self.beta {
            0.0
        } else {
            (std_normal_mass(zx, self.beta) / self.z).min(1.0)
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        // Work from whichever tail the truncation window sits in.
        let zx = if self.alpha > 0.0 {
            std_normal_isf(std_normal_sf(self.alpha) - u * self.z)
        } else {
            std_normal_quantile(std_normal_cdf(self.alpha) + u * self.z)
        };
        let lower = self.mean + self.sd * self.alpha;
        let upper = self.mean + self.sd * self.beta;
        (self.mean + self.sd * zx).clamp(lower, upper)
    }
}

impl DistributionSpec {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        DistributionSpec::Gaussian { mean, variance }
    }

    pub fn truncated_gaussian(mean: f64, variance: f64, lower: f64, upper: f64) -> Self {
        DistributionSpec::TruncatedGaussian {
            mean,
            variance,
            lower,
            upper,
        }
    }

    pub fn uniform(lower: f64, upper: f64) -> Self {
        DistributionSpec::Uniform { lower, upper }
    }

    /// Check the parameter ranges. `field` names the config key in errors.
    pub fn validate(&self, field: &str) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(&format!("{field}.{name}"), "must be finite"))
            }
        };
        let positive_variance = |v: f64| {
            finite("variance", v)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(&format!("{field}.variance"), "must be > 0"))
            }
        };
        let ordered = |lower: f64, upper: f64| {
            finite("lower", lower)?;
            finite("upper", upper)?;
            if lower < upper {
                Ok(())
            } else {
                Err(Error::config(&format!("{field}.upper"), "must exceed lower"))
            }
        };
        match *self {
            DistributionSpec::Gaussian { mean, variance } => {
                finite("mean", mean)?;
                positive_variance(variance)
            }
            DistributionSpec::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => {
                finite("mean", mean)?;
                positive_variance(variance)?;
                ordered(lower, upper)?;
                if Truncation::new(mean, variance, lower, upper).z > 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(field, "truncation interval carries no Gaussian mass"))
                }
            }
            DistributionSpec::Uniform { lower, upper } => ordered(lower, upper),
        }
    }

    /// Closed support `(lower, upper)`, with infinite endpoints for the Gaussian.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistributionSpec::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DistributionSpec::TruncatedGaussian { lower, upper, .. } | DistributionSpec::Uniform { lower, upper } => {
                (lower, upper)
            }
        }
    }

    pub fn has_bounded_support(&self) -> bool {
        !matches!(self, DistributionSpec::Gaussian { .. })
    }

    /// A finite interval carrying all but ~1e-15 of the mass; the support
    /// itself for bounded families.
    pub fn mass_window(&self) -> (f64, f64) {
        match *self {
            DistributionSpec::Gaussian { mean, variance } => {
                let half = 8.0 * variance.sqrt();
                (mean - half, mean + half)
            }
            _ => self.support(),
        }
    }

    fn truncation(&self) -> Option<Truncation> {
        match *self {
            DistributionSpec::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => Some(Truncation::new(mean, variance, lower, upper)),
            _ => None,
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match *self {
            DistributionSpec::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                std_normal_pdf((y - mean) / sd) / sd
            }
            DistributionSpec::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => {
                if y < lower || y > upper {
                    return 0.0;
                }
                let t = Truncation::new(mean, variance, lower, upper);
                std_normal_pdf((y - mean) / t.sd) / (t.sd * t.z)
            }
            DistributionSpec::Uniform { lower, upper } => {
                if y < lower || y > upper {
                    0.0
                } else {
                    1.0 / (upper - lower)
                }
            }
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, y: f64) -> f64 {
        match *self {
            DistributionSpec::Gaussian { mean, variance } => {
                let d = y - mean;
                -0.5 * d * d / variance - 0.5 * variance.ln() - LN_SQRT_2PI
            }
            DistributionSpec::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => {
                if y < lower || y > upper {
                    return f64::NEG_INFINITY;
                }
                let t = Truncation::new(mean, variance, lower, upper);
                let d = y - mean;
                -0.5 * d * d / variance - 0.5 * variance.ln() - LN_SQRT_2PI - t.z.ln()
            }
            DistributionSpec::Uniform { lower, upper } => {
                if y < lower || y > upper {
                    f64::NEG_INFINITY
                } else {
                    -(upper - lower).ln()
                }
            }
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        match *self {
            DistributionSpec::Gaussian { mean, variance } => std_normal_cdf((y - mean) / variance.sqrt()),
            DistributionSpec::TruncatedGaussian { .. } => {
                let t = self.truncation().expect("truncated family");
                t.cdf_std((y - t.mean) / t.sd)
            }
            DistributionSpec::Uniform { lower, upper } => ((y - lower) / (upper - lower)).clamp(0.0, 1.0),
        }
    }

    /// Survival function `1 - cdf(y)`, computed without cancellation in the
    /// upper tail.
    pub fn sf(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        match *self {
            DistributionSpec::Gaussian { mean, variance } => std_normal_sf((y - mean) / variance.sqrt()),
            DistributionSpec::TruncatedGaussian { .. } => {
                let t = self.truncation().expect("truncated family");
                t.sf_std((y - t.mean) / t.sd)
            }
            DistributionSpec::Uniform { lower, upper } => ((upper - y) / (upper - lower)).clamp(0.0, 1.0),
        }
    }

    /// Inverse cdf on (0, 1). Returns the support endpoints at 0 and 1.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            DistributionSpec::Gaussian { mean, variance } => mean + variance.sqrt() * std_normal_quantile(u),
            DistributionSpec::TruncatedGaussian { lower, upper, .. } => {
                if u <= 0.0 {
                    lower
                } else if u >= 1.0 {
                    upper
                } else {
                    self.truncation().expect("truncated family").quantile(u)
                }
            }
            DistributionSpec::Uniform { lower, upper } => {
                (lower + u.clamp(0.0, 1.0) * (upper - lower)).clamp(lower, upper)
            }
        }
    }

    /// Probability of the interval `(a, b]`. Reversed endpoints give 0.
    pub fn interval_prob(&self, a: ExtReal, b: ExtReal) -> f64 {
        if a.total_cmp(&b) != std::cmp::Ordering::Less {
            return 0.0;
        }
        let cdf = |x: ExtReal| match x {
            ExtReal::NegInf => 0.0,
            ExtReal::PosInf => 1.0,
            ExtReal::Finite(v) => self.cdf(v),
        };
        let sf = |x: ExtReal| match x {
            ExtReal::NegInf => 1.0,
            ExtReal::PosInf => 0.0,
            ExtReal::Finite(v) => self.sf(v),
        };
        let lower_cdf = cdf(a);
        let p = if lower_cdf > 0.5 {
            sf(a) - sf(b)
        } else {
            cdf(b) - lower_cdf
        };
        p.clamp(0.0, 1.0)
    }

    /// Draw `n` i.i.d. values by inverse-cdf transform of open uniforms.
    /// One `u64` is consumed per draw.
    pub fn sample(&self, n: usize, rng: &mut impl RngCore) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        self.sample_into(n, rng, &mut out);
        out
    }

    /// Like [`DistributionSpec::sample`] but appends to `out`.
    pub fn sample_into(&self, n: usize, rng: &mut impl RngCore, out: &mut Vec<f64>) {
        out.reserve(n);
        match *self {
            DistributionSpec::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                out.extend((0..n).map(|_| mean + sd * std_normal_quantile(open_unit(rng))));
            }
            DistributionSpec::TruncatedGaussian { .. } => {
                let t = self.truncation().expect("truncated family");
                out.extend((0..n).map(|_| t.quantile(open_unit(rng))));
            }
            DistributionSpec::Uniform { lower, upper } => {
                let width = upper - lower;
                out.extend((0..n).map(|_| (lower + open_unit(rng) * width).clamp(lower, upper)));
            }
        }
    }

    /// Quadratic form of the log density on the support:
    /// `ln p(y) = -precision/2 * y^2 + precision*mean * y + const`.
    /// Uniform has zero precision.
    fn log_density_shape(&self) -> (f64, f64) {
        match *self {
            DistributionSpec::Gaussian { mean, variance }
            | DistributionSpec::TruncatedGaussian { mean, variance, .. } => (1.0 / variance, mean / variance),
            DistributionSpec::Uniform { .. } => (0.0, 0.0),
        }
    }
}

/// Constants with `k1 <= dmu/dpi(y) <= k2` on the common support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRatioBounds {
    pub k1: f64,
    pub k2: f64,
}

/// Infimum and supremum of the density ratio `dmu/dpi`.
///
/// Only pairs sharing one bounded support qualify (plus the trivial `mu == pi`).
/// For every supported family the log ratio is a quadratic in `y`, so the
/// extremes sit at the two endpoints or at the vertex, and the bounds are exact.
pub fn density_ratio_bounds(mu: &DistributionSpec, pi: &DistributionSpec) -> Result<DensityRatioBounds> {
    if mu == pi {
        return Ok(DensityRatioBounds { k1: 1.0, k2: 1.0 });
    }
    if !mu.has_bounded_support() || !pi.has_bounded_support() {
        return Err(Error::UnboundedRatio(format!(
            "{mu} vs {pi}: unbounded support makes the tail ratio unbounded"
        )));
    }
    let (lo, hi) = mu.support();
    if (lo, hi) != pi.support() {
        return Err(Error::UnboundedRatio(format!("{mu} vs {pi}: supports differ")));
    }
    let log_ratio = |y: f64| mu.ln_pdf(y) - pi.ln_pdf(y);
    let mut candidates = vec![lo, hi];
    let (prec_mu, lin_mu) = mu.log_density_shape();
    let (prec_pi, lin_pi) = pi.log_density_shape();
    let curvature = prec_pi - prec_mu;
    if curvature != 0.0 {
        let vertex = (lin_pi - lin_mu) / curvature;
        if vertex > lo && vertex < hi {
            candidates.push(vertex);
        }
    }
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in candidates {
        let r = log_ratio(y);
        min = min.min(r);
        max = max.max(r);
    }
    Ok(DensityRatioBounds {
        k1: min.exp(),
        k2: max.exp(),
    })
}
