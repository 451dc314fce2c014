use outlierseq_core::{estimate_error_curve, DistributionSpec, ErrorCurve, ExperimentConfig};

#[test]
fn error_probability_falls_with_sample_size() {
    let config = ExperimentConfig {
        n_grid: vec![100, 200, 400, 800],
        trials: 10_000,
        pi: DistributionSpec::gaussian(0.0, 1.0),
        mu: DistributionSpec::gaussian(0.0, 2.0),
        seed: 5,
        ..ExperimentConfig::default()
    };
    let curve = estimate_error_curve(&config).unwrap();
    for detector in &config.detectors {
        let label = detector.label();
        let pe: Vec<f64> = curve.rows_for(&label).map(|r| r.pe_hat).collect();
        assert_eq!(pe.len(), 4);
        assert!(pe[0] > 0.0, "{label}: {pe:?}");
        for w in pe.windows(2) {
            assert!(w[1] <= w[0], "{label}: {pe:?}");
            if w[1] > 0.0 {
                assert!(w[1] < w[0], "{label}: {pe:?}");
            }
        }
    }
    let text = curve.to_csv_string();
    assert_eq!(ErrorCurve::read_csv(text.as_bytes()).unwrap(), curve);
}
