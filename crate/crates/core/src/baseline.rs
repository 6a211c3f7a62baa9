//! Non-learned comparators: random-phase 2D-CCS with OMP beam prediction and
//! the exhaustive-search oracle.

use num_complex::Complex64;

use crate::channel::best_beam_label;
use crate::error::{Error, Result};
use crate::linalg::{circ_shift, dft2, ComplexMatrix};
use crate::rng;
use crate::sensing::{quantize_angle, unit_phasor, BaseMatrix, Measurement, Resolution, SubsamplingSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpConfig {
    /// Maximum number of atoms.
    pub sparsity: usize,
    /// Stop once `||r|| <= tolerance * ||y||`.
    pub tolerance: f64,
}

impl Default for OmpConfig {
    fn default() -> Self {
        Self {
            sparsity: 4,
            tolerance: 1e-10,
        }
    }
}

/// Constant-modulus base matrix with i.i.d. uniform phases (on the `q`-bit
/// grid when constrained) and `||P||_F = N`.
pub fn random_phase_matrix(n: usize, resolution: Resolution, seed: u64) -> Result<BaseMatrix> {
    if n == 0 {
        return Err(Error::dim("array side must be positive"));
    }
    let mut r = rng::stream(seed, &[rng::salt::RANDOM_PHASE, n as u64]);
    let p = ComplexMatrix::from_fn(n, n, |_, _| {
        let phase = rng::uniform_phase(&mut r);
        match resolution {
            Resolution::Bits(q) => unit_phasor(quantize_angle(phase, q)),
            Resolution::Unconstrained => Complex64::from_polar(1.0, phase),
        }
    });
    BaseMatrix::new(p, resolution)
}

/// OMP result for one measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OmpOutcome {
    pub beam: (usize, usize),
    /// Selected beamspace indices in selection order.
    pub support: Vec<usize>,
    pub coefficients: Vec<Complex64>,
    /// `y` was zero, so no atom could be chosen.
    pub degenerate: bool,
}

/// Sensing dictionary for a fixed base matrix and shift set.
///
/// Row `m` is `conj(vec(dft2(circ_shift(P, r_m, c_m))))`, so that
/// `y = A vec(X)` for the beamspace `X` of the channel.
#[derive(Debug, Clone)]
pub struct OmpSolver {
    n: usize,
    rows: usize,
    dict: Vec<Complex64>,
    col_norms: Vec<f64>,
}

impl OmpSolver {
    pub fn new(p: &ComplexMatrix, omega: &SubsamplingSet) -> Result<Self> {
        let n = p.side()?;
        if omega.side() != n {
            return Err(Error::dim("shift grid does not match the base matrix"));
        }
        let cols = n * n;
        let mut dict = Vec::with_capacity(omega.len() * cols);
        for &(r, c) in omega.shifts() {
            let row = dft2(&circ_shift(p, r, c)?)?;
            dict.extend(row.as_slice().iter().map(|z| z.conj()));
        }
        let mut col_norms = vec![0.0; cols];
        for row in dict.chunks(cols) {
            for (acc, z) in col_norms.iter_mut().zip(row) {
                *acc += z.norm_sqr();
            }
        }
        col_norms.iter_mut().for_each(|v| *v = v.sqrt());
        Ok(Self {
            n,
            rows: omega.len(),
            dict,
            col_norms,
        })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn measurements(&self) -> usize {
        self.rows
    }

    #[inline]
    fn atom(&self, m: usize, j: usize) -> Complex64 {
        self.dict[m * self.n * self.n + j]
    }

    /// `A x` for a dense beamspace vector.
    pub fn apply(&self, x: &ComplexMatrix) -> Result<Vec<Complex64>> {
        if x.rows() != self.n || x.cols() != self.n {
            return Err(Error::dim("beamspace does not match the dictionary"));
        }
        Ok(self
            .dict
            .chunks(self.n * self.n)
            .map(|row| row.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn solve(&self, y: &Measurement, cfg: &OmpConfig) -> Result<OmpOutcome> {
        if cfg.sparsity == 0 {
            return Err(Error::Config("OMP sparsity must be at least 1".into()));
        }
        if cfg.sparsity > self.rows {
            return Err(Error::Config(format!(
                "OMP sparsity {} exceeds the {} measurements",
                cfg.sparsity, self.rows
            )));
        }
        if y.len() != self.rows {
            return Err(Error::dim(format!(
                "expected {} measurements, got {}",
                self.rows,
                y.len()
            )));
        }
        let y_norm = y.y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if y_norm == 0.0 {
            return Ok(OmpOutcome {
                beam: (0, 0),
                support: Vec::new(),
                coefficients: Vec::new(),
                degenerate: true,
            });
        }

        let cols = self.n * self.n;
        let mut residual = y.y.clone();
        let mut support: Vec<usize> = Vec::new();
        let mut coef: Vec<Complex64> = Vec::new();
        let mut corr = vec![Complex64::new(0.0, 0.0); cols];

        while support.len() < cfg.sparsity {
            corr.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (m, r) in residual.iter().enumerate() {
                let row = &self.dict[m * cols..(m + 1) * cols];
                for (acc, a) in corr.iter_mut().zip(row) {
                    *acc += a.conj() * r;
                }
            }
            let mut best: Option<(usize, f64)> = None;
            for (j, c) in corr.iter().enumerate() {
                if self.col_norms[j] == 0.0 || support.contains(&j) {
                    continue;
                }
                let score = c.norm() / self.col_norms[j];
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((j, score));
                }
            }
            let Some((j, _)) = best else { break };
            support.push(j);
            match self.least_squares(&support, &y.y) {
                Ok(c) => coef = c,
                // the new atom is dependent on the support; keep the last fit
                Err(Error::Singular { .. }) if support.len() > 1 => {
                    support.pop();
                    break;
                }
                Err(e) => return Err(e),
            }
            for (m, r) in residual.iter_mut().enumerate() {
                let fit: Complex64 = support.iter().zip(&coef).map(|(&s, c)| self.atom(m, s) * c).sum();
                *r = y.y[m] - fit;
            }
            let r_norm = residual.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if r_norm <= cfg.tolerance * y_norm {
                break;
            }
        }

        let mut best = 0;
        for (k, c) in coef.iter().enumerate() {
            if c.norm() > coef[best].norm() {
                best = k;
            }
        }
        let idx = support[best];
        Ok(OmpOutcome {
            beam: (idx / self.n, idx % self.n),
            support,
            coefficients: coef,
            degenerate: false,
        })
    }

    /// Least-squares coefficients on `support` via the normal equations.
    fn least_squares(&self, support: &[usize], y: &[Complex64]) -> Result<Vec<Complex64>> {
        let k = support.len();
        let mut gram = vec![Complex64::new(0.0, 0.0); k * k];
        let mut rhs = vec![Complex64::new(0.0, 0.0); k];
        for m in 0..self.rows {
            for (a, &sa) in support.iter().enumerate() {
                let da = self.atom(m, sa).conj();
                rhs[a] += da * y[m];
                for (b, &sb) in support.iter().enumerate() {
                    gram[a * k + b] += da * self.atom(m, sb);
                }
            }
        }
        solve_pivoted(gram, rhs)
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_pivoted(mut a: Vec<Complex64>, mut b: Vec<Complex64>) -> Result<Vec<Complex64>> {
    let k = b.len();
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i * k + col].norm().total_cmp(&a[j * k + col].norm()))
            .expect("non-empty range");
        let mag = a[pivot * k + col].norm();
        if mag <= 1e-13 * scale || mag == 0.0 {
            return Err(Error::Singular {
                row: col,
                col,
                magnitude: mag,
            });
        }
        if pivot != col {
            for j in 0..k {
                a.swap(pivot * k + j, col * k + j);
            }
            b.swap(pivot, col);
        }
        let d = a[col * k + col];
        for i in col + 1..k {
            let f = a[i * k + col] / d;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in col..k {
                let v = a[col * k + j];
                a[i * k + j] -= f * v;
            }
            let v = b[col];
            b[i] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); k];
    for i in (0..k).rev() {
        let s: Complex64 = (i + 1..k).map(|j| a[i * k + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * k + i];
    }
    Ok(x)
}

/// OMP beam prediction from a measurement vector.
pub fn omp_predict(y: &Measurement, p: &BaseMatrix, omega: &SubsamplingSet, cfg: &OmpConfig) -> Result<(usize, usize)> {
    Ok(OmpSolver::new(p.matrix(), omega)?.solve(y, cfg)?.beam)
}

/// Exhaustive-search oracle.
pub fn exhaustive_best(h: &ComplexMatrix) -> Result<(usize, usize)> {
    best_beam_label(h)
}
