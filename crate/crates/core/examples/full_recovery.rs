//! Sampling every circular shift of a base matrix whose spectrum has no
//! zeros determines the channel exactly: the beamspace is recovered by
//! dividing the measured spectrum by the effective filter spectrum.
//!
//! cargo run --release --example full_recovery

use convcs::channel::{beamspace, gen_scenario, ScenarioConfig};
use convcs::linalg::circ_xcorr;
use convcs::sensing::{chirp_matrix, effective_spectrum, full_recovery};

fn main() -> convcs::Result<()> {
    let n = 16;
    let p = chirp_matrix(n);
    let z = effective_spectrum(&p)?.abs();
    let (lo, hi) = z.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    println!("chirp base matrix: |Z| spans [{lo:.3}, {hi:.3}]");

    let samples = gen_scenario(&ScenarioConfig { seed: 4, ..Default::default() }, 5)?;
    for (i, s) in samples.iter().enumerate() {
        let h = &s.matrices()[0];
        let g = circ_xcorr(h, &p)?;
        let x = full_recovery(&g, &p)?;
        let err = x.rel_error(&beamspace(h)?);
        println!("sample {i}: label {:?}, relative beamspace error {err:.2e}", s.label);
    }

    // a single-bit pattern has spectral zeros and cannot be inverted
    let flat = convcs::ComplexMatrix::filled(n, n, num_complex::Complex64::new(1.0, 0.0));
    match full_recovery(&circ_xcorr(&samples[0].matrices()[0], &flat)?, &flat) {
        Ok(_) => println!("all-ones base matrix unexpectedly invertible"),
        Err(e) => println!("all-ones base matrix: {e}"),
    }
    Ok(())
}
