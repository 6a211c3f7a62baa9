//! Compressive 2D-CCS measurements: subsampling sets, noisy measurements of
//! the circular correlation, phase quantisation, masks and full-sampling
//! recovery.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dft2, idft2, xcorr_entry, ComplexMatrix};
use crate::rng;

/// Relative threshold below which a spectrum entry counts as zero.
pub const RECOVERY_TOLERANCE: f64 = 1e-9;

/// Ordered list of distinct 2D circulant shifts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsamplingSet {
    n: usize,
    shifts: Vec<(usize, usize)>,
}

impl SubsamplingSet {
    pub fn new(n: usize, shifts: Vec<(usize, usize)>) -> Result<Self> {
        if shifts.is_empty() || shifts.len() > n * n {
            return Err(Error::Range(format!(
                "subsampling set size {} outside [1, {}]",
                shifts.len(),
                n * n
            )));
        }
        let mut seen = vec![false; n * n];
        for &(r, c) in &shifts {
            if r >= n || c >= n {
                return Err(Error::Range(format!("shift ({r}, {c}) outside [0, {n})")));
            }
            if std::mem::replace(&mut seen[r * n + c], true) {
                return Err(Error::invalid(format!("shift ({r}, {c}) repeated")));
            }
        }
        Ok(Self { n, shifts })
    }

    /// Every shift of the grid in row-major order.
    pub fn full(n: usize) -> Self {
        Self {
            n,
            shifts: (0..n * n).map(|i| (i / n, i % n)).collect(),
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn shifts(&self) -> &[(usize, usize)] {
        &self.shifts
    }

    /// One `r,c` pair per line.
    pub fn to_text(&self) -> String {
        self.shifts
            .iter()
            .map(|(r, c)| format!("{r},{c}\n"))
            .collect()
    }

    pub fn from_text(n: usize, text: &str) -> Result<Self> {
        let mut shifts = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (r, c) = line
                .split_once(',')
                .ok_or_else(|| Error::invalid(format!("bad shift line `{line}`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad shift line `{line}`")))
            };
            shifts.push((parse(r)?, parse(c)?));
        }
        Self::new(n, shifts)
    }
}

/// `M` distinct shifts drawn uniformly from the `N x N` grid.
pub fn sample_omega(n: usize, m: usize, seed: u64) -> Result<SubsamplingSet> {
    if m == 0 || m > n * n {
        return Err(Error::Range(format!("M = {m} outside [1, {}]", n * n)));
    }
    let mut r = rng::stream(seed, &[rng::salt::OMEGA, n as u64, m as u64]);
    let shifts = index::sample(&mut r, n * n, m)
        .into_iter()
        .map(|i| (i / n, i % n))
        .collect();
    SubsamplingSet::new(n, shifts)
}

/// Phase-shifter resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resolution {
    Bits(u32),
    Unconstrained,
}

impl Resolution {
    pub fn bits(self) -> Option<u32> {
        match self {
            Resolution::Bits(q) => Some(q),
            Resolution::Unconstrained => None,
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Bits(q) => write!(f, "{q}"),
            Resolution::Unconstrained => write!(f, "inf"),
        }
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "none" | "unconstrained" => Ok(Resolution::Unconstrained),
            other => {
                let q: u32 = other
                    .parse()
                    .map_err(|_| Error::Config(format!("bad phase resolution `{other}`")))?;
                if q == 0 || q > 16 {
                    return Err(Error::Config(format!("phase resolution {q} outside [1, 16] bits")));
                }
                Ok(Resolution::Bits(q))
            }
        }
    }
}

/// Constant-modulus base matrix with its resolution and Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMatrix {
    p: ComplexMatrix,
    resolution: Resolution,
    norm: f64,
}

impl BaseMatrix {
    /// Checks constant modulus and, for finite resolution, grid membership.
    pub fn new(p: ComplexMatrix, resolution: Resolution) -> Result<Self> {
        let n = p.side()?;
        let norm = p.frobenius_norm();
        let modulus = norm / n as f64;
        for z in p.as_slice() {
            if (z.norm() - modulus).abs() > 1e-9 * modulus.max(1.0) {
                return Err(Error::invalid("base matrix entries must share one modulus"));
            }
            if let Resolution::Bits(q) = resolution {
                if phase_residue(*z, q) > 1e-9 {
                    return Err(Error::invalid(format!("entry phase is not on the {q}-bit grid")));
                }
            }
        }
        Ok(Self { p, resolution, norm })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.p
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.p
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// `||P||_F`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Weights the array actually radiates: `P / ||P||_F`, unit total
    /// power. With `E ||H||_F^2 = N^2` the quasi-omni receive SNR is then
    /// `1 / sigma^2`.
    pub fn radiated(&self) -> BaseMatrix {
        let p = self.p.scale(1.0 / self.norm);
        BaseMatrix {
            p,
            resolution: self.resolution,
            norm: 1.0,
        }
    }
}

/// Distance of an entry's phase from the nearest `q`-bit grid point, in
/// units of the grid step.
pub fn phase_residue(z: Complex64, q: u32) -> f64 {
    let step = TAU / (1u64 << q) as f64;
    let t = z.arg().rem_euclid(TAU) / step;
    (t - t.round()).abs()
}

/// Compressive measurement `y[m] = G(r[m], c[m]) + v[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: Vec<Complex64>,
    pub noise_var: f64,
}

impl Measurement {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Noise-free `P_Omega(H (*) P)`.
pub fn subsample_xcorr(h: &ComplexMatrix, p: &ComplexMatrix, omega: &SubsamplingSet) -> Result<Vec<Complex64>> {
    let n = h.side()?;
    if p.rows() != n || p.cols() != n || omega.side() != n {
        return Err(Error::dim(format!(
            "channel {n}x{n}, base matrix {}x{}, shift grid {}",
            p.rows(),
            p.cols(),
            omega.side()
        )));
    }
    Ok(omega
        .shifts()
        .iter()
        .map(|&(r, c)| xcorr_entry(h, p, r, c))
        .collect())
}

/// Noisy measurement using noise drawn from `rng`.
pub fn measure_with<R: Rng + ?Sized>(
    h: &ComplexMatrix,
    p: &ComplexMatrix,
    omega: &SubsamplingSet,
    noise_var: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if !(noise_var >= 0.0) {
        return Err(Error::invalid(format!("noise variance {noise_var} is negative")));
    }
    let mut y = subsample_xcorr(h, p, omega)?;
    if noise_var > 0.0 {
        for v in &mut y {
            *v += rng::complex_gaussian(rng, noise_var);
        }
    }
    Ok(Measurement { y, noise_var })
}

/// Noisy measurement with noise keyed by `seed`.
pub fn measure(
    h: &ComplexMatrix,
    p: &BaseMatrix,
    omega: &SubsamplingSet,
    noise_var: f64,
    seed: u64,
) -> Result<Measurement> {
    let mut r = rng::stream(seed, &[]);
    measure_with(h, p.matrix(), omega, noise_var, &mut r)
}

/// Quantised phase `Delta * floor(angle / Delta)` with the angle taken in
/// `[0, 2 pi)` and `Delta = 2 pi / 2^q`.
pub fn quantize_angle(angle: f64, q: u32) -> f64 {
    let levels = 1u64 << q;
    let step = TAU / levels as f64;
    let t = angle.rem_euclid(TAU) / step;
    let nearest = t.round();
    // entries already on the grid must survive float round-off in arg()
    let b = if (t - nearest).abs() < 1e-9 { nearest } else { t.floor() };
    (b as u64 % levels) as f64 * step
}

/// Unit-modulus phase quantiser; input magnitudes are discarded.
pub fn quantize_phase(p: &ComplexMatrix, q: u32) -> Result<ComplexMatrix> {
    if q == 0 {
        return Err(Error::Range("phase resolution must be at least one bit".into()));
    }
    for (i, z) in p.as_slice().iter().enumerate() {
        if z.norm() == 0.0 {
            return Err(Error::invalid(format!(
                "entry {i} is zero; its phase is undefined"
            )));
        }
    }
    Ok(p.map(|z| unit_phasor(quantize_angle(z.arg(), q))))
}

/// `e^{j phase}` with exact values on the axes.
pub(crate) fn unit_phasor(phase: f64) -> Complex64 {
    let quarter = phase / (TAU / 4.0);
    if (quarter - quarter.round()).abs() < 1e-12 {
        match (quarter.round() as i64).rem_euclid(4) {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    } else {
        Complex64::from_polar(1.0, phase)
    }
}

/// Sensing mask `|N U^* P U^*|`.
pub fn mask(p: &ComplexMatrix) -> Result<Array2<f64>> {
    let n = p.side()?;
    let z = dft2(p)?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| n as f64 * z[(i, j)].norm()))
}

/// Effective spectrum `N conj(dft2(P))` relating `dft2(G)` to the beamspace.
pub fn effective_spectrum(p: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = p.side()?;
    Ok(dft2(p)?.conj().scale(n as f64))
}

/// Recovers the beamspace from the fully sampled correlation `G`.
pub fn full_recovery(g: &ComplexMatrix, p: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = g.side()?;
    if p.rows() != n || p.cols() != n {
        return Err(Error::dim("measurement and base matrix sizes differ"));
    }
    let z = effective_spectrum(p)?;
    let peak = z.max_abs();
    for i in 0..n {
        for j in 0..n {
            let mag = z[(i, j)].norm();
            if !(mag > RECOVERY_TOLERANCE * peak) {
                return Err(Error::Singular { row: i, col: j, magnitude: mag });
            }
        }
    }
    let f = dft2(g)?;
    Ok(ComplexMatrix::from_fn(n, n, |i, j| f[(i, j)] / z[(i, j)]))
}

/// Base matrix whose spectrum magnitude is flat: the 2D quadratic chirp
/// `exp(j pi (k^2 + l^2) / N)` for even `N` (`(k^2 + k)` for odd `N`).
pub fn chirp_matrix(n: usize) -> ComplexMatrix {
    let phase = |k: usize| {
        let k = k as f64;
        let num = if n % 2 == 0 { k * k } else { k * k + k };
        std::f64::consts::PI * num / n as f64
    };
    ComplexMatrix::from_fn(n, n, |k, l| Complex64::from_polar(1.0, phase(k) + phase(l)))
}

/// Inverse of the full-grid measurement map, used to synthesise channels
/// with a planted correlation.
pub fn channel_from_beamspace(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    idft2(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{circ_shift, circ_xcorr};
    use crate::testutil::{random_matrix, random_phase_matrix};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn omega_sampling() {
        let n = 4;
        let full = sample_omega(n, n * n, 1).unwrap();
        let mut cells: Vec<_> = full.shifts().to_vec();
        cells.sort();
        assert_eq!(cells, SubsamplingSet::full(n).shifts());

        let one = sample_omega(n, 1, 2).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.shifts()[0].0 < n && one.shifts()[0].1 < n);

        assert_eq!(sample_omega(16, 40, 9).unwrap(), sample_omega(16, 40, 9).unwrap());
        assert_ne!(sample_omega(16, 40, 9).unwrap(), sample_omega(16, 40, 10).unwrap());
        assert!(sample_omega(n, 0, 1).is_err());
        assert!(sample_omega(n, 17, 1).is_err());
    }

    #[test]
    fn omega_text_round_trip_and_validation() {
        let o = sample_omega(8, 10, 3).unwrap();
        assert_eq!(SubsamplingSet::from_text(8, &o.to_text()).unwrap(), o);
        assert!(SubsamplingSet::new(4, vec![(0, 1), (0, 1)]).is_err());
        assert!(SubsamplingSet::new(4, vec![(4, 0)]).is_err());
        assert!(SubsamplingSet::from_text(4, "1;2\n").is_err());
    }

    #[test]
    fn measurement_picks_correlation_entries() {
        let n = 4;
        let h = random_matrix(n, 1);
        let p = random_phase_matrix(n, 1.0, 2);
        let base = BaseMatrix::new(p.clone(), Resolution::Unconstrained).unwrap();
        let g = circ_xcorr(&h, &p).unwrap();
        let omega = SubsamplingSet::new(n, vec![(0, 1), (1, 2)]).unwrap();
        let y = measure(&h, &base, &omega, 0.0, 0).unwrap();
        assert!((y.y[0] - g[(0, 1)]).norm() < 1e-12);
        assert!((y.y[1] - g[(1, 2)]).norm() < 1e-12);

        let zero = measure(&ComplexMatrix::zeros(n, n), &base, &omega, 0.0, 0).unwrap();
        assert!(zero.y.iter().all(|z| z.norm() == 0.0));

        let full = measure(&h, &base, &SubsamplingSet::full(n), 0.0, 0).unwrap();
        for (k, z) in full.y.iter().enumerate() {
            assert!((z - g.as_slice()[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn measurement_is_linear() {
        let n = 6;
        let (h1, h2) = (random_matrix(n, 3), random_matrix(n, 4));
        let p = random_phase_matrix(n, 1.0, 5);
        let omega = sample_omega(n, 12, 6).unwrap();
        let (a, b) = (0.7, -2.1);
        let combo = h1.scale(a).add(&h2.scale(b)).unwrap();
        let y = subsample_xcorr(&combo, &p, &omega).unwrap();
        let y1 = subsample_xcorr(&h1, &p, &omega).unwrap();
        let y2 = subsample_xcorr(&h2, &p, &omega).unwrap();
        for k in 0..y.len() {
            assert!((y[k] - (y1[k] * a + y2[k] * b)).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_statistics() {
        let n = 4;
        let h = ComplexMatrix::zeros(n, n);
        let p = random_phase_matrix(n, 1.0, 7);
        let omega = SubsamplingSet::full(n);
        let var = 0.8;
        let mut r = rng::stream(11, &[]);
        let (mut sr, mut si, mut count) = (0.0, 0.0, 0usize);
        while count < 100_000 {
            let y = measure_with(&h, &p, &omega, var, &mut r).unwrap();
            for z in &y.y {
                sr += z.re * z.re;
                si += z.im * z.im;
            }
            count += y.len();
        }
        assert!((sr / count as f64 / (var / 2.0) - 1.0).abs() < 0.03);
        assert!((si / count as f64 / (var / 2.0) - 1.0).abs() < 0.03);
        assert!(measure_with(&h, &p, &omega, -1.0, &mut r).is_err());
    }

    #[test]
    fn quantiser_examples() {
        let one = ComplexMatrix::from_vec(1, 1, vec![Complex64::from_polar(1.0, PI / 3.0)]).unwrap();
        assert_eq!(quantize_phase(&one, 1).unwrap()[(0, 0)], c(1.0, 0.0));
        let z = ComplexMatrix::from_vec(1, 1, vec![Complex64::from_polar(2.5, 3.0 * PI / 4.0)]).unwrap();
        assert_eq!(quantize_phase(&z, 2).unwrap()[(0, 0)], c(0.0, 1.0));
        // negative angles are taken in [0, 2 pi)
        let neg = ComplexMatrix::from_vec(1, 1, vec![Complex64::from_polar(1.0, -0.1)]).unwrap();
        let qn = quantize_phase(&neg, 2).unwrap()[(0, 0)];
        assert!((qn - c(0.0, -1.0)).norm() < 1e-15);
        assert!(quantize_phase(&ComplexMatrix::zeros(2, 2), 1).is_err());
    }

    #[test]
    fn quantiser_invariants() {
        for q in 1..=4u32 {
            let p = random_matrix(8, q as u64);
            let once = quantize_phase(&p, q).unwrap();
            let twice = quantize_phase(&once, q).unwrap();
            assert_eq!(once, twice);
            for z in once.as_slice() {
                assert!((z.norm() - 1.0).abs() < 1e-15);
                assert!(phase_residue(*z, q) < 1e-12);
                // Q_q is contained in Q_{q+1}
                assert!(phase_residue(*z, q + 1) < 1e-12);
            }
        }
    }

    #[test]
    fn mask_properties() {
        let n = 8;
        let ones = ComplexMatrix::filled(n, n, c(0.5, 0.0));
        let m = mask(&ones).unwrap();
        assert!((m[[0, 0]] - 0.5 * (n * n) as f64).abs() < 1e-12);
        assert!(m.iter().enumerate().all(|(i, &v)| i == 0 || v < 1e-12));

        let p = random_phase_matrix(n, 1.0, 3);
        let shifted = circ_shift(&p, 3, 5).unwrap();
        let (a, b) = (mask(&p).unwrap(), mask(&shifted).unwrap());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));

        let x = dft2(&p).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((a[[i, j]] - n as f64 * x[(i, j)].norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chirp_has_flat_spectrum() {
        for n in [4, 5, 8, 16] {
            let m = mask(&chirp_matrix(n)).unwrap();
            let first = m[[0, 0]];
            assert!(m.iter().all(|v| (v - first).abs() < 1e-9 * first));
        }
    }

    #[test]
    fn full_sampling_round_trip() {
        let n = 8;
        let p = chirp_matrix(n);
        for seed in 0..5 {
            let h = random_matrix(n, seed);
            let g = circ_xcorr(&h, &p).unwrap();
            let x = full_recovery(&g, &p).unwrap();
            assert!(x.rel_error(&dft2(&h).unwrap()) < 1e-8);
        }
        let zero = full_recovery(&ComplexMatrix::zeros(n, n), &p).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let err = full_recovery(&ComplexMatrix::zeros(n, n), &ComplexMatrix::filled(n, n, c(1.0, 0.0)));
        assert!(matches!(err, Err(Error::Singular { .. })));
    }

    #[test]
    fn base_matrix_validation() {
        let p = random_phase_matrix(4, 0.25, 1);
        let b = BaseMatrix::new(p, Resolution::Unconstrained).unwrap();
        assert!((b.norm() - 1.0).abs() < 1e-12);
        assert!(BaseMatrix::new(random_matrix(4, 2), Resolution::Unconstrained).is_err());
        let q = quantize_phase(&random_matrix(4, 3), 3).unwrap();
        assert!(BaseMatrix::new(q.clone(), Resolution::Bits(3)).is_ok());
        assert!(BaseMatrix::new(q, Resolution::Bits(1)).is_err());
    }

    #[test]
    fn resolution_parsing() {
        assert_eq!("3".parse::<Resolution>().unwrap(), Resolution::Bits(3));
        assert_eq!("inf".parse::<Resolution>().unwrap(), Resolution::Unconstrained);
        assert!("0".parse::<Resolution>().is_err());
        assert!("x".parse::<Resolution>().is_err());
    }
}
