//! Closed-form divergences and the error-exponent expressions they feed.
//!
//! Gaussian pairs use closed forms; everything else falls back to adaptive
//! quadrature over the finite window that carries the mass.

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorKind;
use crate::distributions::{density_ratio_bounds, DistributionSpec};
use crate::error::{Error, Result};
use crate::mmd::{Kernel, KernelSpec};
use crate::quadrature;

const QUAD_TOL: f64 = 1e-12;

/// Intersection of the mass windows of two distributions, or `None` when
/// they do not overlap.
fn common_window(p: &DistributionSpec, q: &DistributionSpec) -> Option<(f64, f64)> {
    let (a0, b0) = p.mass_window();
    let (a1, b1) = q.mass_window();
    let (lo, hi) = (a0.max(a1), b0.min(b1));
    (lo < hi).then_some((lo, hi))
}

fn support_edges(ds: &[&DistributionSpec]) -> Vec<f64> {
    ds.iter()
        .filter(|d| d.has_bounded_support())
        .flat_map(|d| {
            let (lo, hi) = d.support();
            [lo, hi]
        })
        .collect()
}

/// `D(mu || pi) = integral dmu ln(dmu/dpi)`.
///
/// Fails with [`Error::DivergenceInfinite`] unless the support of `mu` lies
/// inside the support of `pi`.
pub fn kl_divergence(mu: &DistributionSpec, pi: &DistributionSpec) -> Result<f64> {
    let (mu_lo, mu_hi) = mu.support();
    let (pi_lo, pi_hi) = pi.support();
    if mu_lo < pi_lo || mu_hi > pi_hi {
        return Err(Error::DivergenceInfinite(format!(
            "support of {mu} is not contained in the support of {pi}"
        )));
    }
    match (*mu, *pi) {
        (
            DistributionSpec::Gaussian { mean: m1, variance: v1 },
            DistributionSpec::Gaussian { mean: m2, variance: v2 },
        ) => {
            let d = m1 - m2;
            Ok(0.5 * (v1 / v2 + d * d / v2 - 1.0 + (v2 / v1).ln()))
        }
        (DistributionSpec::Uniform { lower: a, upper: b }, DistributionSpec::Uniform { lower: c, upper: d }) => {
            Ok(((d - c) / (b - a)).ln())
        }
        _ => {
            let (lo, hi) = mu.mass_window();
            let value = quadrature::integrate_pieces(
                |y| {
                    let p = mu.pdf(y);
                    if p > 0.0 {
                        p * (mu.ln_pdf(y) - pi.ln_pdf(y))
                    } else {
                        0.0
                    }
                },
                lo,
                hi,
                &support_edges(&[pi]),
                QUAD_TOL,
            );
            Ok(value.max(0.0))
        }
    }
}

/// Bhattacharyya distance `-ln integral sqrt(mu pi)`; symmetric. Infinite
/// when the supports do not overlap.
pub fn bhattacharyya(pi: &DistributionSpec, mu: &DistributionSpec) -> f64 {
    match (*pi, *mu) {
        (
            DistributionSpec::Gaussian { mean: m1, variance: v1 },
            DistributionSpec::Gaussian { mean: m2, variance: v2 },
        ) => {
            let d = m1 - m2;
            d * d / (4.0 * (v1 + v2)) + 0.5 * ((v1 + v2) / (2.0 * (v1 * v2).sqrt())).ln()
        }
        _ => chernoff_distance(pi, mu, 0.5).max(0.0),
    }
}

/// Chernoff distance `C_lambda(p, q) = -ln integral p^lambda q^(1-lambda)`,
/// by quadrature. `lambda` must lie in (0, 1).
pub fn chernoff_distance(p: &DistributionSpec, q: &DistributionSpec, lambda: f64) -> f64 {
    assert!(lambda > 0.0 && lambda < 1.0, "lambda must lie in (0, 1), got {lambda}");
    let Some((lo, hi)) = common_window(p, q) else {
        return f64::INFINITY;
    };
    let integral = quadrature::integrate_pieces(
        |y| {
            let lp = p.ln_pdf(y);
            let lq = q.ln_pdf(y);
            if lp == f64::NEG_INFINITY || lq == f64::NEG_INFINITY {
                0.0
            } else {
                (lambda * lp + (1.0 - lambda) * lq).exp()
            }
        },
        lo,
        hi,
        &support_edges(&[p, q]),
        QUAD_TOL,
    );
    if integral <= 0.0 {
        f64::INFINITY
    } else {
        -integral.min(1.0).ln()
    }
}

/// `E[k(X, Y)]` for independent `X ~ p`, `Y ~ q`.
fn cross_mean(kernel: &KernelSpec, p: &DistributionSpec, q: &DistributionSpec) -> f64 {
    match (*p, *q) {
        (
            DistributionSpec::Gaussian { mean: m1, variance: v1 },
            DistributionSpec::Gaussian { mean: m2, variance: v2 },
        ) => {
            let g2 = kernel.gamma() * kernel.gamma();
            let s = g2 + v1 + v2;
            let d = m1 - m2;
            (g2 / s).sqrt() * (-d * d / (2.0 * s)).exp()
        }
        _ => {
            let (lo, hi) = p.mass_window();
            quadrature::integrate(|x| p.pdf(x) * kernel.mean_against(x, q), lo, hi, QUAD_TOL)
        }
    }
}

/// Population `MMD^2[mu, pi]` under the Gaussian kernel.
pub fn mmd_squared_exact(mu: &DistributionSpec, pi: &DistributionSpec, gamma: f64) -> f64 {
    if mu == pi {
        return 0.0;
    }
    let kernel = KernelSpec::gaussian(gamma);
    let value = kernel.double_mean(mu) + kernel.double_mean(pi) - 2.0 * cross_mean(&kernel, mu, pi);
    value.max(0.0)
}

/// Error exponent of the likelihood-ratio test with both laws known: `2 B(pi, mu)`.
pub fn exponent_ml(pi: &DistributionSpec, mu: &DistributionSpec) -> f64 {
    2.0 * bhattacharyya(pi, mu)
}

/// Lower bound on the exponent of `P{|D_hat - D| > eps}` for the partition
/// estimator: `(1/32) (k1/k2)^2 eps^2`.
pub fn bound_kl_estimator(k1: f64, k2: f64, eps: f64) -> f64 {
    (k1 / k2).powi(2) * eps * eps / 32.0
}

/// Lower bound on the KL detector's exponent:
/// `(1/32) (k1/(k1+k2))^2 D(mu||pi)^2`.
pub fn bound_kl_test(pi: &DistributionSpec, mu: &DistributionSpec, k1: f64, k2: f64) -> Result<f64> {
    let d = kl_divergence(mu, pi)?;
    Ok((k1 / (k1 + k2)).powi(2) * d * d / 32.0)
}

/// Lower bound on the MMD detector's exponent: `MMD^4[mu, pi] / (9 K^2)`.
/// `kernel_bound` is the kernel's supremum (1 for the Gaussian kernel).
pub fn bound_mmd_test(pi: &DistributionSpec, mu: &DistributionSpec, gamma: f64, kernel_bound: f64) -> f64 {
    let m2 = mmd_squared_exact(mu, pi, gamma);
    m2 * m2 / (9.0 * kernel_bound * kernel_bound)
}

/// The theoretical exponent attached to a detector's fit: `2B` for the
/// likelihood-ratio test, the KL-test bound when the density ratio is bounded
/// (0 otherwise), and the MMD-test bound.
pub fn detector_floor(pi: &DistributionSpec, mu: &DistributionSpec, detector: &DetectorKind) -> f64 {
    match detector {
        DetectorKind::Ml { .. } => exponent_ml(pi, mu),
        DetectorKind::Kl { .. } => density_ratio_bounds(mu, pi)
            .and_then(|r| bound_kl_test(pi, mu, r.k1, r.k2))
            .unwrap_or(0.0),
        DetectorKind::Mmd { kernel } => bound_mmd_test(pi, mu, kernel.gamma(), kernel.sup_bound()),
    }
}

/// Divergences and exponent targets for one `(pi, mu)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub ml_exponent: f64,
    /// `None` when the density ratio is unbounded and the bound does not apply.
    pub kl_test_lower_bound: Option<f64>,
    pub mmd_test_lower_bound: f64,
    /// `None` when the divergence is infinite.
    pub kl_divergence: Option<f64>,
    pub mmd_squared: f64,
    pub density_ratio: Option<crate::distributions::DensityRatioBounds>,
}

/// Everything [`ExponentReport`] holds, for the Gaussian kernel of width `gamma`.
pub fn exponent_report(pi: &DistributionSpec, mu: &DistributionSpec, gamma: f64) -> ExponentReport {
    let kl = kl_divergence(mu, pi).ok();
    let ratio = density_ratio_bounds(mu, pi).ok();
    let kl_bound = match (ratio, kl) {
        (Some(r), Some(d)) => Some((r.k1 / (r.k1 + r.k2)).powi(2) * d * d / 32.0),
        _ => None,
    };
    let kernel = KernelSpec::gaussian(gamma);
    ExponentReport {
        ml_exponent: exponent_ml(pi, mu),
        kl_test_lower_bound: kl_bound,
        mmd_test_lower_bound: bound_mmd_test(pi, mu, gamma, kernel.sup_bound()),
        kl_divergence: kl,
        mmd_squared: mmd_squared_exact(mu, pi, gamma),
        density_ratio: ratio,
    }
}
