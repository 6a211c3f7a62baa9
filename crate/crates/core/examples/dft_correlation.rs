//! The 2D-DFT of a circular cross-correlation is the product of the channel
//! spectrum with `N conj(dft2(P))`, and circular shifts of `P` only change
//! the phase of its spectrum.
//!
//! cargo run --release --example dft_correlation -- 16

use convcs::linalg::{circ_shift, circ_xcorr, dft2};
use convcs::testutil::{random_index, random_matrix};

fn main() -> convcs::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let scale = n as f64;

    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let h = random_matrix(n, 2 * trial);
        let p = random_matrix(n, 2 * trial + 1);
        let lhs = dft2(&circ_xcorr(&h, &p)?)?;
        let rhs = dft2(&h)?.hadamard(&dft2(&p)?.conj().scale(scale))?;
        worst = worst.max(lhs.rel_error(&rhs));
    }
    println!("N = {n}: worst relative error of the correlation identity {worst:.2e}");

    let p = random_matrix(n, 99);
    let base = dft2(&p)?.abs();
    let mut dev = 0.0f64;
    for k in 0..10u64 {
        let (r, c) = (random_index(7, 2 * k, n), random_index(7, 2 * k + 1, n));
        let shifted = dft2(&circ_shift(&p, r, c)?)?.abs();
        for (a, b) in shifted.iter().zip(&base) {
            dev = dev.max((a - b).abs());
        }
    }
    println!("max |spectrum| change over 10 circular shifts {dev:.2e}");
    Ok(())
}
