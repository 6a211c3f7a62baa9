//! Helpers shared by unit tests, integration tests and examples.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::ComplexMatrix;
use crate::rng;

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn random_matrix(n: usize, seed: u64) -> ComplexMatrix {
    let mut r = rng::stream(seed, &[0xA11CE]);
    ComplexMatrix::from_fn(n, n, |_, _| {
        let re: f64 = r.sample(StandardNormal);
        let im: f64 = r.sample(StandardNormal);
        Complex64::new(re, im)
    })
}

/// Constant-modulus matrix with uniformly random continuous phases.
pub fn random_phase_matrix(n: usize, modulus: f64, seed: u64) -> ComplexMatrix {
    let mut r = rng::stream(seed, &[0xF00D]);
    ComplexMatrix::from_fn(n, n, |_, _| Complex64::from_polar(modulus, rng::uniform_phase(&mut r)))
}

/// Uniform draw in `[0, upper)`.
pub fn random_index(seed: u64, key: u64, upper: usize) -> usize {
    rng::stream(seed, &[0x1D, key]).random_range(0..upper)
}
