//! Randomised invariants over the public API.

use convcs::baseline::exhaustive_best;
use convcs::channel::{best_beam_label, gen_scenario, normalize_eval, ChannelSample, ScenarioConfig};
use convcs::eval::{alignment_probability, beamforming_loss, beam_power, rate, snr_bf};
use convcs::linalg::{circ_shift, circ_xcorr, dft2, idft2, ComplexMatrix};
use convcs::sensing::{mask, quantize_angle, quantize_phase, sample_omega, subsample_xcorr};
use convcs::testutil::{random_matrix, random_phase_matrix};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::TAU;

fn close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
    a.rel_error(b) <= tol
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn measurement_is_linear(
        n in 2usize..9,
        seeds in (any::<u64>(), any::<u64>(), any::<u64>()),
        a in (-3.0f64..3.0, -3.0f64..3.0),
        b in (-3.0f64..3.0, -3.0f64..3.0),
    ) {
        let (a, b) = (Complex64::new(a.0, a.1), Complex64::new(b.0, b.1));
        let h1 = random_matrix(n, seeds.0);
        let h2 = random_matrix(n, seeds.1);
        let p = random_phase_matrix(n, 1.0, seeds.2);
        let omega = sample_omega(n, n * n / 2 + 1, seeds.2).unwrap();
        let combo = h1.map(|z| z * a).add(&h2.map(|z| z * b)).unwrap();
        let lhs = subsample_xcorr(&combo, &p, &omega).unwrap();
        let y1 = subsample_xcorr(&h1, &p, &omega).unwrap();
        let y2 = subsample_xcorr(&h2, &p, &omega).unwrap();
        let scale = lhs.iter().map(|z| z.norm()).fold(1.0, f64::max);
        for ((l, u), v) in lhs.iter().zip(&y1).zip(&y2) {
            prop_assert!((l - (a * u + b * v)).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn dft_round_trip_and_correlation_identity(n in 2usize..12, seeds in (any::<u64>(), any::<u64>())) {
        let h = random_matrix(n, seeds.0);
        let p = random_matrix(n, seeds.1);
        prop_assert!(close(&idft2(&dft2(&h).unwrap()).unwrap(), &h, 1e-12));
        let lhs = dft2(&circ_xcorr(&h, &p).unwrap()).unwrap();
        let rhs = dft2(&h).unwrap().hadamard(&dft2(&p).unwrap().conj().scale(n as f64)).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-10));
    }

    #[test]
    fn mask_ignores_circular_shifts(n in 2usize..10, seed in any::<u64>(), r in 0usize..10, c in 0usize..10) {
        let p = random_phase_matrix(n, 1.0, seed);
        let shifted = circ_shift(&p, r % n, c % n).unwrap();
        let (m0, m1) = (mask(&p).unwrap(), mask(&shifted).unwrap());
        let peak = m0.iter().cloned().fold(0.0, f64::max);
        for (x, y) in m0.iter().zip(m1.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn label_ignores_common_complex_gain(
        n in 2usize..10,
        seed in any::<u64>(),
        gain in 1e-3f64..1e3,
        phase in 0.0f64..TAU,
    ) {
        let h = random_matrix(n, seed);
        let g = Complex64::from_polar(gain, phase);
        let label = best_beam_label(&h).unwrap();
        prop_assert_eq!(best_beam_label(&h.map(|z| z * g)).unwrap(), label);
        prop_assert_eq!(exhaustive_best(&h).unwrap(), label);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_on_best_power(
        n in 2usize..9,
        seed in any::<u64>(),
        beam in (0usize..9, 0usize..9),
    ) {
        let s = ChannelSample::narrowband(random_matrix(n, seed), true).unwrap();
        let beam = (beam.0 % n, beam.1 % n);
        let loss = beamforming_loss(&s, beam).unwrap();
        prop_assert!(loss >= 0.0);
        let best = beam_power(&s, s.label).unwrap();
        let got = beam_power(&s, beam).unwrap();
        prop_assert_eq!(loss == 0.0, got == best);
        prop_assert_eq!(beamforming_loss(&s, s.label).unwrap(), 0.0);
    }

    #[test]
    fn metrics_are_invariant_to_snr_preserving_rescaling(
        n in 2usize..9,
        seed in any::<u64>(),
        alpha in 1e-2f64..1e2,
        var in 1e-3f64..1e3,
        beam in (0usize..9, 0usize..9),
    ) {
        let beam = (beam.0 % n, beam.1 % n);
        let s = ChannelSample::narrowband(random_matrix(n, seed), false).unwrap();
        let mut scaled = s.clone();
        scaled.scale(alpha);
        prop_assert_eq!(scaled.label, s.label);
        let v2 = var * alpha * alpha;
        let (a, b) = (snr_bf(&s, beam, var).unwrap(), snr_bf(&scaled, beam, v2).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-300));
        let (a, b) = (rate(&s, beam, var).unwrap(), rate(&scaled, beam, v2).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        let (a, b) = (beamforming_loss(&s, beam).unwrap(), beamforming_loss(&scaled, beam).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 || (a.is_infinite() && b.is_infinite()));
    }

    #[test]
    fn alignment_is_the_exact_match_fraction(pairs in prop::collection::vec(((0usize..4, 0usize..4), (0usize..4, 0usize..4)), 1..40)) {
        let (pred, labels): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let hits = pairs.iter().filter(|(p, l)| p == l).count();
        let p = alignment_probability(&pred, &labels).unwrap();
        prop_assert_eq!(p, hits as f64 / pairs.len() as f64);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn quantiser_invariants(angle in -20.0f64..20.0, q in 1u32..6) {
        let step = TAU / (1u64 << q) as f64;
        let v = quantize_angle(angle, q);
        prop_assert!((0.0..TAU).contains(&v));
        let k = v / step;
        prop_assert!((k - k.round()).abs() < 1e-9);
        prop_assert_eq!(quantize_angle(v, q), v);
        // floor rule: the grid point lies at most one step below the angle
        let gap = (angle - v).rem_euclid(TAU);
        prop_assert!(gap < step + 1e-9 || gap > TAU - 1e-9);
    }

    #[test]
    fn quantised_matrix_is_unit_modulus_and_idempotent(n in 1usize..7, seed in any::<u64>(), q in 1u32..5) {
        let p = random_matrix(n, seed);
        let once = quantize_phase(&p, q).unwrap();
        let twice = quantize_phase(&once, q).unwrap();
        prop_assert_eq!(&once, &twice);
        let step = TAU / (1u64 << q) as f64;
        for z in once.as_slice() {
            prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            let k = z.arg().rem_euclid(TAU) / step;
            prop_assert!((k - k.round()).abs() < 1e-9 || (k - (1u64 << q) as f64).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn eval_normalisation_keeps_power_ratios(seed in 0u64..1000, count in 2usize..12) {
        let cfg = ScenarioConfig { n: 4, seed, ..Default::default() };
        let raw = gen_scenario(&cfg, count).unwrap();
        let again = gen_scenario(&cfg, count).unwrap();
        prop_assert_eq!(&raw, &again);
        let mut normed = raw.clone();
        let alpha = normalize_eval(&mut normed).unwrap();
        let mean = normed.iter().map(|s| s.power()).sum::<f64>() / count as f64;
        prop_assert!((mean - 16.0).abs() < 1e-9);
        for (a, b) in raw.iter().zip(&normed) {
            prop_assert!((b.power() / a.power() - alpha * alpha).abs() < 1e-9 * alpha * alpha);
            prop_assert_eq!(a.label, b.label);
        }
    }
}
