//! Dense complex matrices and the exact primitives behind 2D convolutional
//! sensing: the unitary 2D-DFT, 2D circular cross-correlation and circulant
//! shifts.
//!
//! The DFT convention is fixed throughout the crate: `U_N(k, l) =
//! exp(-j 2 pi k l / N) / sqrt(N)`, and the beamspace transform is
//! `dft2(A) = U_N^* A U_N^*`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Index, IndexMut};

use ndarray::Array3;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Largest side for which [`circ_xcorr`] evaluates the correlation directly.
pub const DIRECT_XCORR_MAX_N: usize = 16;

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}j ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: Complex64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds `P_R + j P_I` from two row-major real parts.
    pub fn from_parts(rows: usize, cols: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::dim("real/imaginary parts do not match the shape"));
        }
        let data = re
            .iter()
            .zip(im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        Ok(Self { rows, cols, data })
    }

    /// The `e_{r,c}` unit matrix.
    pub fn unit(n: usize, r: usize, c: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(r, c)] = Complex64::new(1.0, 0.0);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Side length of a square matrix.
    pub fn side(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::dim(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn re(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sqr().sqrt()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn abs(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|z| z * alpha)
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for z in &mut self.data {
            *z *= alpha;
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Matrix inner product `<A, B> = sum A(k,l) conj(B(k,l))`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim("inner product of differently shaped matrices"));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b.conj())
            .sum())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Relative Frobenius distance `||self - other|| / ||other||`.
    pub fn rel_error(&self, reference: &Self) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale = reference.frobenius_norm();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// The unitary DFT matrix `U_N`.
#[derive(Debug, Clone, Copy)]
pub struct DftConvention {
    pub n: usize,
}

impl DftConvention {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    /// Forward kernel entry `exp(-j 2 pi k l / N) / sqrt(N)`.
    pub fn kernel(&self, k: usize, l: usize) -> Complex64 {
        let n = self.n;
        // reduce before the float multiply so large products stay exact
        let phase = -2.0 * PI * ((k * l) % n) as f64 / n as f64;
        Complex64::from_polar(1.0 / (n as f64).sqrt(), phase)
    }

    pub fn matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.n, self.n, |k, l| self.kernel(k, l))
    }
}

/// Planned unitary 2D transforms of one side length, for repeated use on
/// row-major `N x N` buffers.
pub struct Fft2 {
    n: usize,
    forward: std::sync::Arc<dyn Fft<f64>>,
    inverse: std::sync::Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    transposed: Vec<Complex64>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft(n, FftDirection::Forward);
        let inverse = planner.plan_fft(n, FftDirection::Inverse);
        let len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); len],
            transposed: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    fn transform(&mut self, data: &mut [Complex64], direction: FftDirection) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "buffer must hold N x N entries");
        let fft = match direction {
            FftDirection::Forward => &self.forward,
            FftDirection::Inverse => &self.inverse,
        };
        fft.process_with_scratch(data, &mut self.scratch);
        for r in 0..n {
            for c in 0..n {
                self.transposed[c * n + r] = data[r * n + c];
            }
        }
        fft.process_with_scratch(&mut self.transposed, &mut self.scratch);
        let scale = 1.0 / n as f64;
        for r in 0..n {
            for c in 0..n {
                data[r * n + c] = self.transposed[c * n + r] * scale;
            }
        }
    }

    /// In-place [`dft2`].
    pub fn dft2(&mut self, data: &mut [Complex64]) {
        self.transform(data, FftDirection::Inverse);
    }

    /// In-place [`idft2`].
    pub fn idft2(&mut self, data: &mut [Complex64]) {
        self.transform(data, FftDirection::Forward);
    }
}

/// Beamspace transform `U_N^* A U_N^*`.
pub fn dft2(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.side()?;
    let mut out = a.clone();
    Fft2::new(n).dft2(&mut out.data);
    Ok(out)
}

/// Inverse of [`dft2`]: `U_N B U_N`.
pub fn idft2(b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = b.side()?;
    let mut out = b.clone();
    Fft2::new(n).idft2(&mut out.data);
    Ok(out)
}

fn check_pair(h: &ComplexMatrix, p: &ComplexMatrix) -> Result<usize> {
    let n = h.side()?;
    if p.rows != n || p.cols != n {
        return Err(Error::dim(format!(
            "channel is {n}x{n} but base matrix is {}x{}",
            p.rows, p.cols
        )));
    }
    Ok(n)
}

/// Single entry of the 2D circular cross-correlation,
/// `G(r, c) = sum_{k,l} H(k, l) conj(P((k - r) mod N, (l - c) mod N))`.
///
/// `r` and `c` must already be reduced to `[0, N)`.
#[inline]
pub fn xcorr_entry(h: &ComplexMatrix, p: &ComplexMatrix, r: usize, c: usize) -> Complex64 {
    let n = h.rows;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..n {
        let pk = (k + n - r) % n;
        let h_row = &h.data[k * n..(k + 1) * n];
        let p_row = &p.data[pk * n..(pk + 1) * n];
        for (l, hv) in h_row.iter().enumerate() {
            let pl = (l + n - c) % n;
            acc += hv * p_row[pl].conj();
        }
    }
    acc
}

/// 2D circular cross-correlation `H (*) P`.
///
/// Evaluated directly for `N <= DIRECT_XCORR_MAX_N`, otherwise through the
/// transform identity (see [`circ_xcorr_fft`]).
pub fn circ_xcorr(h: &ComplexMatrix, p: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = check_pair(h, p)?;
    if n > DIRECT_XCORR_MAX_N {
        return circ_xcorr_fft(h, p);
    }
    Ok(circ_xcorr_direct(h, p))
}

fn circ_xcorr_direct(h: &ComplexMatrix, p: &ComplexMatrix) -> ComplexMatrix {
    let n = h.rows;
    ComplexMatrix::from_fn(n, n, |r, c| xcorr_entry(h, p, r, c))
}

/// Fast path: `G = idft2(dft2(H) .* N conj(dft2(P)))`.
pub fn circ_xcorr_fft(h: &ComplexMatrix, p: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = check_pair(h, p)?;
    let x = dft2(h)?;
    let z = dft2(p)?.conj().scale(n as f64);
    idft2(&x.hadamard(&z)?)
}

/// `out(k, l) = P((k - r) mod N, (l - c) mod N)`.
pub fn circ_shift(p: &ComplexMatrix, r: usize, c: usize) -> Result<ComplexMatrix> {
    let n = p.side()?;
    if r >= n || c >= n {
        return Err(Error::Range(format!(
            "shift ({r}, {c}) outside [0, {n}); reduce offsets mod N first"
        )));
    }
    Ok(ComplexMatrix::from_fn(n, n, |k, l| {
        p[((k + n - r) % n, (l + n - c) % n)]
    }))
}

/// Real stacked input tensor of shape `(2N, 4N, 2)` (height, width, channel).
///
/// The left half of the width carries `(H_R, H_I)` tiled 2x2 and the right
/// half `(H_I, -H_R)`. A valid, stride-1 real correlation against the filter
/// `(P_R, P_I)` yields an `(N+1) x (3N+1)` map whose `N x N` block at column 0
/// is `Re(H (*) P)` and whose block at column `2N` is `Im(H (*) P)`.
pub fn stack_real_tensor(h: &ComplexMatrix) -> Result<Array3<f64>> {
    let n = h.side()?;
    let mut t = Array3::<f64>::zeros((2 * n, 4 * n, 2));
    for y in 0..2 * n {
        for x in 0..2 * n {
            let z = h[(y % n, x % n)];
            t[[y, x, 0]] = z.re;
            t[[y, x, 1]] = z.im;
            t[[y, x + 2 * n, 0]] = z.im;
            t[[y, x + 2 * n, 1]] = -z.re;
        }
    }
    Ok(t)
}

/// Multichannel valid-mode, stride-1 real cross-correlation summed over
/// channels. Input `(H, W, C)`, filter `(h, w, C)`, output `(H-h+1, W-w+1)`.
pub fn real_xcorr_valid(input: &Array3<f64>, filter: &Array3<f64>) -> Result<ndarray::Array2<f64>> {
    let (ih, iw, ic) = input.dim();
    let (fh, fw, fc) = filter.dim();
    if ic != fc || fh > ih || fw > iw {
        return Err(Error::dim(format!(
            "filter {fh}x{fw}x{fc} does not fit input {ih}x{iw}x{ic}"
        )));
    }
    let (oh, ow) = (ih - fh + 1, iw - fw + 1);
    let mut out = ndarray::Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for k in 0..fh {
                for l in 0..fw {
                    for ch in 0..fc {
                        acc += input[[y + k, x + l, ch]] * filter[[k, l, ch]];
                    }
                }
            }
            out[[y, x]] = acc;
        }
    }
    Ok(out)
}

/// Two-channel filter `(P_R, P_I)` in the layout [`real_xcorr_valid`] expects.
pub fn filter_tensor(p: &ComplexMatrix) -> Result<Array3<f64>> {
    let n = p.side()?;
    let mut f = Array3::<f64>::zeros((n, n, 2));
    for k in 0..n {
        for l in 0..n {
            f[[k, l, 0]] = p[(k, l)].re;
            f[[k, l, 1]] = p[(k, l)].im;
        }
    }
    Ok(f)
}
