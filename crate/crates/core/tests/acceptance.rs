//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported as FAIL but do not fail
//! the run; the run does fail if one of them starts passing, so the list
//! cannot go stale.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use outlierseq_core::analytics::{
    bhattacharyya, bound_kl_estimator, bound_kl_test, bound_mmd_test, kl_divergence, mmd_squared_exact,
};
use outlierseq_core::detectors::argmax_lowest;
use outlierseq_core::mmd::Kernel;
use outlierseq_core::montecarlo::ErrorRow;
use outlierseq_core::rng::replicate_stream;
use outlierseq_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Replicate-set seed for the estimator studies.
const REPLICATE_SEED: u64 = 20_240_611;
/// Seed for the Monte Carlo studies.
const STUDY_SEED: u64 = 5;

/// Criteria that fail with the implementation as specified.
const KNOWN_FAILURES: &[u32] = &[6];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

struct Gate {
    outcomes: Vec<Outcome>,
}

impl Gate {
    fn record(&mut self, id: u32, title: &str, budget: Duration, f: impl FnOnce() -> (bool, String)) {
        print!("running [{id}] {title} ... ");
        std::io::stdout().flush().ok();
        let start = Instant::now();
        let (ok, detail) = f();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = ok && in_time;
        println!("done");
        let timing = format!("{:.1}s of {:.0}s budget", elapsed.as_secs_f64(), budget.as_secs_f64());
        let tag = match (pass, KNOWN_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        let timing_note = if in_time { "" } else { " [over time budget]" };
        println!("{tag} [{id}] {title}: {detail}; {timing}{timing_note}");
        self.outcomes.push(Outcome { id, pass, detail });
    }
}

// ---------------------------------------------------------------------------
// Independent oracle: Gaussian densities written out by hand and composite
// Simpson rules on a wide window. Shares no code with the library.

fn gauss_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

fn gauss_ln_pdf(x: f64, m: f64, v: f64) -> f64 {
    -(x - m) * (x - m) / (2.0 * v) - 0.5 * (2.0 * PI * v).ln()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let mut s = f(a) + f(b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn window(pairs: &[(f64, f64)]) -> (f64, f64) {
    let lo = pairs
        .iter()
        .map(|&(m, v)| m - 12.0 * v.sqrt())
        .fold(f64::INFINITY, f64::min);
    let hi = pairs
        .iter()
        .map(|&(m, v)| m + 12.0 * v.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn oracle_kl(p: (f64, f64), q: (f64, f64)) -> f64 {
    let (a, b) = window(&[p, q]);
    simpson(
        |x| gauss_pdf(x, p.0, p.1) * (gauss_ln_pdf(x, p.0, p.1) - gauss_ln_pdf(x, q.0, q.1)),
        a,
        b,
        20_000,
    )
}

fn oracle_bhattacharyya(p: (f64, f64), q: (f64, f64)) -> f64 {
    let (a, b) = window(&[p, q]);
    -simpson(
        |x| (gauss_pdf(x, p.0, p.1) * gauss_pdf(x, q.0, q.1)).sqrt(),
        a,
        b,
        20_000,
    )
    .ln()
}

/// `E[k(X, Y)]` for independent Gaussians by a nested Simpson rule.
fn oracle_cross(p: (f64, f64), q: (f64, f64), gamma: f64) -> f64 {
    let (a, b) = window(&[p, q]);
    let k = |x: f64, y: f64| (-(x - y) * (x - y) / (2.0 * gamma * gamma)).exp();
    simpson(
        |x| gauss_pdf(x, p.0, p.1) * simpson(|y| gauss_pdf(y, q.0, q.1) * k(x, y), a, b, 1_200),
        a,
        b,
        1_200,
    )
}

fn oracle_mmd2(mu: (f64, f64), pi: (f64, f64), gamma: f64) -> f64 {
    oracle_cross(mu, mu, gamma) + oracle_cross(pi, pi, gamma) - 2.0 * oracle_cross(mu, pi, gamma)
}

fn criterion_1() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(REPLICATE_SEED);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..20 {
        let p = (rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0));
        let q = (rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0));
        let gamma = rng.random_range(0.5..2.0);
        let (dp, dq) = (
            DistributionSpec::gaussian(p.0, p.1),
            DistributionSpec::gaussian(q.0, q.1),
        );
        let diffs = [
            kl_divergence(&dp, &dq).unwrap() - oracle_kl(p, q),
            bhattacharyya(&dp, &dq) - oracle_bhattacharyya(p, q),
            mmd_squared_exact(&dp, &dq, gamma) - oracle_mmd2(p, q, gamma),
        ];
        for d in diffs {
            worst = worst.max(d.abs());
            if d.is_nan() || d.abs() > 1e-6 {
                failures += 1;
            }
        }
    }
    (
        failures == 0,
        format!("max |closed form - quadrature| = {worst:.2e} over 20 pairs x 3 quantities (tol 1e-6)"),
    )
}

fn criterion_2() -> (bool, String) {
    let mu = DistributionSpec::gaussian(0.0, 2.0);
    let pi = DistributionSpec::gaussian(0.0, 1.0);
    let target = 0.153_426_4;
    let n = 10_000;
    let mut inside = 0;
    let mut worst: f64 = 0.0;
    for r in 0..100 {
        let xs = mu.sample(n, &mut replicate_stream(REPLICATE_SEED, n, r));
        let d = estimate_kl(&xs, &pi, PartitionSchedule::SqrtN).unwrap();
        worst = worst.max((d - target).abs());
        if (d - target).abs() <= 0.08 {
            inside += 1;
        }
    }
    (
        inside >= 95,
        format!(
            "{inside}/100 replicates within 0.08 of {target} (largest deviation {worst:.4}, seed {REPLICATE_SEED})"
        ),
    )
}

/// The bounded-ratio pair shared by criteria 3 and 7: a wide and a narrow
/// Gaussian, both truncated to [-2, 2].
fn truncated_pair() -> (DistributionSpec, DistributionSpec) {
    (
        DistributionSpec::truncated_gaussian(0.0, 4.0, -2.0, 2.0),
        DistributionSpec::truncated_gaussian(0.0, 0.25, -2.0, 2.0),
    )
}

fn criterion_3() -> (bool, String) {
    let (mu, pi) = truncated_pair();
    let d = kl_divergence(&mu, &pi).unwrap();
    let b = density_ratio_bounds(&mu, &pi).unwrap();
    let floor = bound_kl_estimator(b.k1, b.k2, 0.1);
    let ns = [250usize, 500, 1000, 2000];
    let reps = 10_000u64;
    let freq: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let hits = (0..reps)
                .filter(|&r| {
                    let xs = mu.sample(n, &mut replicate_stream(REPLICATE_SEED, n, r));
                    (estimate_kl(&xs, &pi, PartitionSchedule::SqrtN).unwrap() - d).abs() > 0.1
                })
                .count();
            hits as f64 / reps as f64
        })
        .collect();
    let decreasing = freq.windows(2).all(|w| w[1] < w[0]);
    let (first, last) = (freq[0], freq[ns.len() - 1]);
    let exponent = if last > 0.0 {
        -(last.ln() - first.ln()) / (ns[ns.len() - 1] - ns[0]) as f64
    } else {
        f64::INFINITY
    };
    (
        decreasing && exponent >= floor,
        format!(
            "D = {d:.6}, K1 = {:.4}, K2 = {:.2}; exceedance {:?} at n = {ns:?}; two-point exponent {exponent:.3e} >= floor {floor:.3e}",
            b.k1, b.k2, freq
        ),
    )
}

fn criterion_4() -> (bool, String) {
    let pi = DistributionSpec::gaussian(0.0, 1.0);
    let mu = DistributionSpec::gaussian(1.0, 1.0);
    // At 1e5 trials only n = 10 and 20 reach 10 errors (true error rate
    // Phi(-sqrt(n/2)) gives ~5 errors at n = 30), so every non-empty row is
    // used.
    let config = ExperimentConfig {
        m: 2,
        n_grid: vec![10, 20, 30, 40],
        trials: 100_000,
        pi,
        mu,
        detectors: vec![DetectorKind::Ml { mu }],
        seed: STUDY_SEED,
        outlier_placement: OutlierPlacement::Uniform,
        min_errors_for_fit: 1,
    };
    let curve = estimate_error_curve(&config).unwrap();
    let target = analytics::exponent_ml(&pi, &mu);
    let counts: Vec<u64> = curve.rows.iter().map(|r| r.errors).collect();
    match fit_exponent(&curve, "ml", target, config.min_errors_for_fit) {
        Ok(fit) => {
            let ok = fit.slope >= 0.6 * target && fit.slope <= 1.4 * target && fit.r_squared > 0.95;
            (
                ok,
                format!(
                    "errors {counts:?} at n = {:?}; alpha = {:.4} (target {target:.4}, window [{:.3}, {:.3}]), r2 = {:.4}, rows used {}",
                    config.n_grid,
                    fit.slope,
                    0.6 * target,
                    1.4 * target,
                    fit.r_squared,
                    fit.rows_used
                ),
            )
        }
        Err(e) => (false, format!("errors {counts:?}: {e}")),
    }
}

fn kl() -> DetectorKind {
    DetectorKind::Kl {
        schedule: PartitionSchedule::SqrtN,
    }
}

fn mmd() -> DetectorKind {
    DetectorKind::Mmd {
        kernel: KernelSpec::default(),
    }
}

/// The four outlier laws with their sample-size grids. Grids are perfect
/// squares so every SqrtN partition has equal cells.
fn scenarios() -> Vec<(f64, Vec<usize>)> {
    vec![
        (0.2, vec![9, 16, 25, 36]),
        (1.2, vec![625, 1225, 1849, 2500]),
        (1.8, vec![64, 121, 196, 256]),
        (2.0, vec![64, 100, 144, 196]),
    ]
}

fn scenario_curve(variance: f64, n_grid: Vec<usize>) -> ErrorCurve {
    let config = ExperimentConfig {
        m: 5,
        n_grid,
        trials: 10_000,
        pi: DistributionSpec::gaussian(0.0, 1.0),
        mu: DistributionSpec::gaussian(0.0, variance),
        detectors: vec![kl(), mmd()],
        seed: STUDY_SEED,
        outlier_placement: OutlierPlacement::Uniform,
        min_errors_for_fit: 10,
    };
    estimate_error_curve(&config).unwrap()
}

fn criterion_5(curves: &[(f64, ErrorCurve)]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (variance, curve) in curves {
        let min_errors = curve.rows.iter().map(|r| r.errors).min().unwrap();
        ok &= min_errors >= 10;
        let mut fits = Vec::new();
        for label in ["kl:sqrt_n", "mmd:gamma=1"] {
            match fit_exponent(curve, label, 0.0, 10) {
                Ok(f) => {
                    ok &= f.r_squared > 0.9 && f.slope > 0.0 && f.rows_used == curve.rows_for(label).count();
                    fits.push(format!("{label} alpha={:.4} r2={:.4}", f.slope, f.r_squared));
                }
                Err(e) => {
                    ok = false;
                    fits.push(format!("{label}: {e}"));
                }
            }
        }
        parts.push(format!(
            "N(0,{variance}): min cell errors {min_errors}, {}",
            fits.join(", ")
        ));
    }
    (ok, parts.join("; "))
}

fn criterion_6(curves: &[(f64, ErrorCurve)]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (variance, curve) in curves.iter().filter(|(v, _)| *v == 0.2 || *v == 2.0) {
        let n = curve
            .rows_for("mmd:gamma=1")
            .filter(|r| r.errors >= 10 && curve.row("kl:sqrt_n", r.n).is_some())
            .map(|r| r.n)
            .max();
        let Some(n) = n else {
            ok = false;
            parts.push(format!("N(0,{variance}): no common n with >= 10 MMD errors"));
            continue;
        };
        let k: &ErrorRow = curve.row("kl:sqrt_n", n).unwrap();
        let m: &ErrorRow = curve.row("mmd:gamma=1", n).unwrap();
        let pass = k.pe_hat < m.pe_hat && k.ci_high < m.ci_low;
        ok &= pass;
        let fit = |label: &str| fit_exponent(curve, label, 0.0, 10).map(|f| f.slope).unwrap_or(f64::NAN);
        parts.push(format!(
            "N(0,{variance}) at n = {n}: KL {:.5} [{:.5}, {:.5}] vs MMD {:.5} [{:.5}, {:.5}] (fitted slopes KL {:.4}, MMD {:.4})",
            k.pe_hat,
            k.ci_low,
            k.ci_high,
            m.pe_hat,
            m.ci_low,
            m.ci_high,
            fit("kl:sqrt_n"),
            fit("mmd:gamma=1")
        ));
    }
    (ok, parts.join("; "))
}

fn criterion_7() -> (bool, String) {
    let (mu, pi) = truncated_pair();
    let b = density_ratio_bounds(&mu, &pi).unwrap();
    let kl_floor = bound_kl_test(&pi, &mu, b.k1, b.k2).unwrap();
    let mmd_floor = bound_mmd_test(&pi, &mu, 1.0, KernelSpec::default().sup_bound());
    let config = ExperimentConfig {
        m: 5,
        n_grid: vec![4, 9, 16, 25],
        trials: 10_000,
        pi,
        mu,
        detectors: vec![kl(), mmd()],
        seed: STUDY_SEED,
        outlier_placement: OutlierPlacement::Uniform,
        min_errors_for_fit: 10,
    };
    let curve = estimate_error_curve(&config).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, floor) in [("kl:sqrt_n", kl_floor), ("mmd:gamma=1", mmd_floor)] {
        match fit_exponent(&curve, label, floor, 10) {
            Ok(f) => {
                ok &= f.meets_floor();
                parts.push(format!(
                    "{label} alpha = {:.4} >= floor {:.3e} (r2 {:.3})",
                    f.slope, floor, f.r_squared
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{label}: {e}"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

fn criterion_8() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(REPLICATE_SEED ^ 8);
    let pi = DistributionSpec::gaussian(0.0, 1.0);
    let mut notes = Vec::new();
    let mut ok = true;

    // Permutation invariance of both estimators, bit for bit.
    let mut perm_ok = true;
    let reference = MmdReference::new(KernelSpec::default(), pi);
    for case in 0..300 {
        let n = rng.random_range(6..400);
        let law = DistributionSpec::gaussian(rng.random_range(-1.0..1.0), rng.random_range(0.2..3.0));
        let mut xs = law.sample(n, &mut rng);
        let kl_a = estimate_kl(&xs, &pi, PartitionSchedule::SqrtN).unwrap();
        let mmd_a = reference.statistic(&xs).unwrap();
        xs.shuffle(&mut rng);
        if case % 2 == 0 {
            xs.reverse();
        }
        perm_ok &= kl_a.to_bits() == estimate_kl(&xs, &pi, PartitionSchedule::SqrtN).unwrap().to_bits();
        perm_ok &= mmd_a.to_bits() == reference.statistic(&xs).unwrap().to_bits();
    }
    ok &= perm_ok;
    notes.push(format!(
        "permutation invariance {}",
        if perm_ok { "ok" } else { "VIOLATED" }
    ));

    // Argmax invariance under strictly increasing maps, and exchangeability.
    let mut argmax_ok = true;
    for _ in 0..1000 {
        let scores: Vec<f64> = (0..rng.random_range(2..10))
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        let wrap = |v: &[f64]| v.iter().map(|&s| ExtReal::Finite(s)).collect::<Vec<_>>();
        let a = argmax_lowest(&wrap(&scores));
        let b = argmax_lowest(&wrap(&scores.iter().map(|s| 3.0 * s + 7.0).collect::<Vec<_>>()));
        let c = argmax_lowest(&wrap(&scores.iter().map(|s| s.exp()).collect::<Vec<_>>()));
        argmax_ok &= a == b && a == c;
    }
    let mut exch_ok = true;
    for _ in 0..200 {
        let seqs: Vec<Vec<f64>> = (0..5)
            .map(|_| DistributionSpec::gaussian(0.0, rng.random_range(0.3..3.0)).sample(40, &mut rng))
            .collect();
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| seqs[i].clone()).collect();
        for kind in [kl(), mmd()] {
            let a = detect(&SequenceBatch::new(seqs.clone()).unwrap(), &pi, &kind).unwrap();
            let b = detect(&SequenceBatch::new(permuted.clone()).unwrap(), &pi, &kind).unwrap();
            exch_ok &= order[b.chosen_index] == a.chosen_index;
            exch_ok &= order.iter().enumerate().all(|(j, &i)| b.scores[j] == a.scores[i]);
        }
    }
    ok &= argmax_ok && exch_ok;
    notes.push(format!(
        "argmax invariance {}, exchangeability {}",
        if argmax_ok { "ok" } else { "VIOLATED" },
        if exch_ok { "ok" } else { "VIOLATED" }
    ));

    // MMD unbiasedness within 4 standard errors.
    let mu = DistributionSpec::gaussian(0.0, 2.0);
    let exact = mmd_squared_exact(&mu, &pi, 1.0);
    let reps = 20_000u64;
    let values: Vec<f64> = (0..reps)
        .map(|r| {
            reference
                .statistic(&mu.sample(50, &mut replicate_stream(REPLICATE_SEED, 50, r)))
                .unwrap()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / reps as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    let se = sd / (reps as f64).sqrt();
    let unbiased = (mean - exact).abs() <= 4.0 * se;
    ok &= unbiased;
    notes.push(format!(
        "MMD mean {mean:.6} vs exact {exact:.6}, |diff|/SE = {:.2}",
        (mean - exact).abs() / se
    ));

    // Null calibration: every sequence from pi, chosen index uniform.
    let mut null_ps = Vec::new();
    for kind in [kl(), mmd(), DetectorKind::Ml { mu }] {
        let prepared = PreparedDetector::new(&pi, &kind);
        let mut counts = [0u64; 5];
        for r in 0..10_000 {
            let mut s = replicate_stream(REPLICATE_SEED ^ 0x6e75_6c6c, 30, r);
            let seqs = (0..5).map(|_| pi.sample(30, &mut s)).collect();
            counts[prepared
                .detect(&SequenceBatch::new(seqs).unwrap())
                .unwrap()
                .chosen_index] += 1;
        }
        let p = chi_square_p(&counts);
        ok &= p > 0.001;
        null_ps.push(format!("{} p={p:.3}", kind.label()));
    }
    notes.push(format!("null calibration {}", null_ps.join(", ")));

    // Byte-determinism across worker counts.
    let config = ExperimentConfig {
        n_grid: vec![16, 36, 64],
        trials: 2_000,
        detectors: vec![kl(), mmd(), DetectorKind::Ml { mu }],
        seed: STUDY_SEED,
        ..ExperimentConfig::default()
    };
    let outputs: Vec<String> = [1, 4, 16]
        .iter()
        .map(|&t| {
            with_threads(t, || estimate_error_curve(&config))
                .unwrap()
                .unwrap()
                .to_csv_string()
        })
        .collect();
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    ok &= same;
    notes.push(format!(
        "thread determinism 1/4/16 {}",
        if same { "byte-identical" } else { "DIFFERS" }
    ));

    (ok, notes.join("; "))
}

fn main() {
    // `cargo test -- --list` and filters are meaningless for this gate.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut gate = Gate { outcomes: Vec::new() };
    let secs = Duration::from_secs;
    gate.record(1, "closed forms agree with quadrature", secs(5), criterion_1);
    gate.record(2, "KL estimator consistency at n = 1e4", secs(120), criterion_2);
    gate.record(3, "KL estimator exceedance decay", secs(600), criterion_3);
    gate.record(4, "ML error exponent", secs(600), criterion_4);

    print!("running scenario studies for [5] and [6] ... ");
    std::io::stdout().flush().ok();
    let start = Instant::now();
    let curves: Vec<(f64, ErrorCurve)> = scenarios()
        .into_iter()
        .map(|(v, grid)| (v, scenario_curve(v, grid)))
        .collect();
    let study_time = start.elapsed();
    println!("done in {:.1}s", study_time.as_secs_f64());
    for (v, curve) in &curves {
        for r in &curve.rows {
            println!(
                "    N(0,{v}) {:<12} n={:<5} errors={:<5} pe={:.5} ci=[{:.5}, {:.5}]",
                r.detector, r.n, r.errors, r.pe_hat, r.ci_low, r.ci_high
            );
        }
    }
    let remaining = secs(1800).saturating_sub(study_time);
    gate.record(5, "exponential consistency of KL and MMD detectors", remaining, || {
        criterion_5(&curves)
    });
    gate.record(6, "KL outperforms MMD for distant outlier variances", remaining, || {
        criterion_6(&curves)
    });
    gate.record(
        7,
        "detector exponents clear their theoretical floors",
        secs(600),
        criterion_7,
    );
    gate.record(8, "property suites", secs(600), criterion_8);

    let passed = gate.outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", gate.outcomes.len());
    let unexpected: Vec<u32> = gate
        .outcomes
        .iter()
        .filter(|o| o.pass == KNOWN_FAILURES.contains(&o.id))
        .map(|o| o.id)
        .collect();
    if !unexpected.is_empty() {
        for o in gate.outcomes.iter().filter(|o| unexpected.contains(&o.id)) {
            let what = if o.pass {
                "now passes; remove it from KNOWN_FAILURES"
            } else {
                "failed"
            };
            eprintln!("criterion {} {what}: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
