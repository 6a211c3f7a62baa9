//! Evaluation sweep and metric examples through the public API.

use convcs::baseline::OmpConfig;
use convcs::channel::{gen_scenario, normalize_eval, ChannelSample, ScenarioConfig};
use convcs::error::Error;
use convcs::eval::{alignment_probability, beamforming_loss, rate, snr_bf, sweep, Method, SweepConfig};
use convcs::linalg::{idft2, ComplexMatrix, DftConvention};
use convcs::network::ModelParams;
use convcs::sensing::{sample_omega, Resolution};
use convcs::testutil::random_matrix;
use num_complex::Complex64;

fn eval_set(count: usize) -> Vec<ChannelSample> {
    let cfg = ScenarioConfig { n: 8, seed: 11, ..Default::default() };
    let mut samples = gen_scenario(&cfg, count).unwrap();
    normalize_eval(&mut samples).unwrap();
    samples
}

fn learned(m: usize, seed: u64) -> ModelParams {
    let omega = sample_omega(8, m, seed).unwrap();
    ModelParams::init(8, omega, 1, &[16], Resolution::Unconstrained, 8.0, seed).unwrap()
}

fn sweep_cfg(snr: &[f64], m: &[usize]) -> SweepConfig {
    SweepConfig { snr_db: snr.to_vec(), measurements: m.to_vec(), seed: 5, threads: 1 }
}

// |sum_kl conj U(i,k) H(k,l) conj U(l,j)|^2 written out with the kernel
fn beam_gain(h: &ComplexMatrix, i: usize, j: usize) -> f64 {
    let n = h.rows();
    let u = DftConvention::new(n);
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..n {
        for l in 0..n {
            acc += u.kernel(i, k).conj() * h[(k, l)] * u.kernel(l, j).conj();
        }
    }
    acc.norm_sqr()
}

#[test]
fn single_method_single_point_gives_one_row() {
    let samples = eval_set(12);
    let report = sweep(&samples, &[Method::learned("net", vec![learned(6, 1)])], &sweep_cfg(&[10.0], &[6])).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert_eq!((row.snr_db, row.m, row.method.as_str()), (10.0, 6, "net"));
    assert_eq!(row.predictions.len(), 12);
    assert_eq!(report.to_csv().lines().count(), 2);
}

#[test]
fn oracle_is_perfect_at_every_snr() {
    let samples = eval_set(20);
    let snr = [-10.0, 0.0, 10.0, 30.0];
    let report = sweep(&samples, &[Method::oracle()], &sweep_cfg(&snr, &[4])).unwrap();
    assert_eq!(report.rows.len(), snr.len());
    for row in &report.rows {
        assert_eq!(row.alignment_prob, 1.0);
        assert_eq!(row.bf_loss_db, 0.0);
        assert_eq!(row.infinite_loss, 0);
    }
}

#[test]
fn rows_follow_grid_order_and_are_reproducible() {
    let samples = eval_set(10);
    let methods = [
        Method::learned("a", vec![learned(4, 1), learned(9, 2)]),
        Method::random_omp(Resolution::Unconstrained, OmpConfig::default()),
    ];
    let cfg = sweep_cfg(&[0.0, 20.0], &[4, 9]);
    let first = sweep(&samples, &methods, &cfg).unwrap();
    let keys: Vec<(f64, usize, &str)> = first.rows.iter().map(|r| (r.snr_db, r.m, r.method.as_str())).collect();
    assert_eq!(
        keys,
        vec![
            (0.0, 4, "a"),
            (0.0, 4, "random_omp"),
            (0.0, 9, "a"),
            (0.0, 9, "random_omp"),
            (20.0, 4, "a"),
            (20.0, 4, "random_omp"),
            (20.0, 9, "a"),
            (20.0, 9, "random_omp"),
        ]
    );
    let threaded = sweep(&samples, &methods, &SweepConfig { threads: 3, ..cfg.clone() }).unwrap();
    assert_eq!(first, threaded);
    for (snr, m) in [(0.0, 4), (20.0, 9)] {
        let a = first.row(snr, m, "a").unwrap();
        let b = first.row(snr, m, "random_omp").unwrap();
        assert_eq!(a.noise_hash, b.noise_hash, "methods see different noise at {snr} dB, M = {m}");
    }
    assert_ne!(first.row(0.0, 4, "a").unwrap().noise_hash, first.row(20.0, 4, "a").unwrap().noise_hash);
}

#[test]
fn stored_predictions_reproduce_the_metrics() {
    let samples = eval_set(15);
    let labels: Vec<(usize, usize)> = samples.iter().map(|s| s.label).collect();
    let methods = [Method::random_omp(Resolution::Bits(2), OmpConfig::default())];
    let report = sweep(&samples, &methods, &sweep_cfg(&[-5.0, 15.0], &[12])).unwrap();
    for row in &report.rows {
        let hits = row.predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
        assert_eq!(row.alignment_prob, hits as f64 / labels.len() as f64);
        assert_eq!(alignment_probability(&row.predictions, &labels).unwrap(), row.alignment_prob);
        let losses: Vec<f64> = samples
            .iter()
            .zip(&row.predictions)
            .map(|(s, &b)| beamforming_loss(s, b).unwrap())
            .filter(|l| l.is_finite())
            .collect();
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        assert!((row.bf_loss_db - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert_eq!(row.infinite_loss, samples.len() - losses.len());
    }
}

#[test]
fn missing_model_names_method_and_m() {
    let samples = eval_set(4);
    let err = sweep(&samples, &[Method::learned("net", vec![learned(6, 1)])], &sweep_cfg(&[0.0], &[6, 10])).unwrap_err();
    match &err {
        Error::MissingModel { method, m } => assert_eq!((method.as_str(), *m), ("net", 10)),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("net") && err.to_string().contains("10"));
}

#[test]
fn empty_inputs_are_rejected() {
    let samples = eval_set(4);
    let oracle = [Method::oracle()];
    assert!(sweep(&[], &oracle, &sweep_cfg(&[0.0], &[4])).is_err());
    assert!(sweep(&samples, &oracle, &sweep_cfg(&[], &[4])).is_err());
    assert!(sweep(&samples, &oracle, &sweep_cfg(&[0.0], &[])).is_err());
    assert!(sweep(&samples, &[], &sweep_cfg(&[0.0], &[4])).is_err());
}

#[test]
fn metrics_match_direct_formulas() {
    let n = 8;
    for seed in 0..10u64 {
        let h = random_matrix(n, seed);
        let sample = ChannelSample::narrowband(h.clone(), true).unwrap();
        let mut best = (0, 0);
        for i in 0..n {
            for j in 0..n {
                if beam_gain(&h, i, j) > beam_gain(&h, best.0, best.1) {
                    best = (i, j);
                }
            }
        }
        assert_eq!(sample.label, best);
        let beam = ((seed as usize * 3) % n, (seed as usize * 5 + 1) % n);
        let var = 0.25 + seed as f64;
        let expected_snr = beam_gain(&h, beam.0, beam.1) / var;
        let snr = snr_bf(&sample, beam, var).unwrap();
        assert!((snr - expected_snr).abs() <= 1e-10 * expected_snr);
        assert!((rate(&sample, beam, var).unwrap() - (1.0 + expected_snr).log2()).abs() < 1e-10);
        let expected_loss = 10.0 * (beam_gain(&h, best.0, best.1) / beam_gain(&h, beam.0, beam.1)).log10();
        assert!((beamforming_loss(&sample, beam).unwrap() - expected_loss).abs() < 1e-9);
        assert_eq!(beamforming_loss(&sample, best).unwrap(), 0.0);
    }
}

#[test]
fn half_power_beam_costs_three_db() {
    // two beamspace atoms with |X|^2 = 2 and 1
    let mut x = ComplexMatrix::zeros(4, 4);
    x[(1, 2)] = Complex64::new(2f64.sqrt(), 0.0);
    x[(3, 0)] = Complex64::new(0.0, 1.0);
    let h = idft2(&x).unwrap();
    let sample = ChannelSample::narrowband(h, false).unwrap();
    assert_eq!(sample.label, (1, 2));
    let loss = beamforming_loss(&sample, (3, 0)).unwrap();
    assert!((loss - 10.0 * 2f64.log10()).abs() < 1e-9, "{loss}");
    assert!((loss - 3.0103).abs() < 1e-4);
    let dead = beamforming_loss(&sample, (0, 0)).unwrap();
    assert!(dead.is_infinite() && dead > 0.0);
    assert!(snr_bf(&sample, (0, 0), 1.0).unwrap() < 1e-20);
    assert!(rate(&sample, (0, 0), 1.0).unwrap() < 1e-20);
}
