//! The learnable 2D-CCS pipeline.
//!
//! A forward pass measures every subcarrier of a channel with the base matrix
//! (the "convolutional filter") at the shifts in `Omega`, scales subcarrier
//! `s` by `p_s`, adds receiver noise and feeds `[Re y; Im y]` to a bias-free
//! ReLU classifier over the `N^2` codebook beams. Gradients are derived by
//! hand for every parameter group.
//!
//! Training follows two stages. Stage 1 runs noise-free on unit-power
//! channels and optimises the filter jointly with provisional classifier
//! weights, projecting the filter onto the constant-modulus phase grid every
//! `quant_interval` mini-batches. Stage 2 freezes the filter and retrains the
//! classifier (and the subcarrier power allocation) on realistically scaled,
//! noisy measurements.

use std::f64::consts::TAU;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::channel::ChannelSample;
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, Fft2};
use crate::rng;
use crate::sensing::{quantize_angle, unit_phasor, BaseMatrix, Measurement, Resolution, SubsamplingSet};

/// Clamp inside the log of the cross-entropy.
pub const LOSS_EPSILON: f64 = 1e-12;

pub const DEFAULT_HIDDEN: [usize; 3] = [80, 256, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Init,
    One,
    Two,
}

impl Stage {
    pub fn as_u8(self) -> u8 {
        match self {
            Stage::Init => 0,
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Stage::Init),
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(Error::Config(format!("unknown training stage {v}"))),
        }
    }
}

/// Parameters of the measurement layer and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    pub omega: SubsamplingSet,
    /// `P = P_R + j P_I`.
    pub filter: ComplexMatrix,
    /// Bias-free layers, each `(out, in)`.
    pub fc: Vec<Array2<f64>>,
    /// Per-subcarrier amplitudes `p_s`; `None` for narrowband models.
    pub subcarrier_weights: Option<Vec<f64>>,
    /// Frobenius norm of the filter's constant-modulus set. The array
    /// radiates `P / omega_conv`, i.e. unit total power.
    pub omega_conv: f64,
    pub resolution: Resolution,
    pub stage: Stage,
    pub seed: u64,
}

impl ModelParams {
    /// Random initialisation: constant-modulus filter with uniform phases and
    /// He-normal classifier weights.
    pub fn init(
        n: usize,
        omega: SubsamplingSet,
        subcarriers: usize,
        hidden: &[usize],
        resolution: Resolution,
        filter_norm: f64,
        seed: u64,
    ) -> Result<Self> {
        if omega.side() != n {
            return Err(Error::dim("subsampling grid does not match the array side"));
        }
        if subcarriers == 0 {
            return Err(Error::Config("at least one subcarrier is required".into()));
        }
        if !(filter_norm > 0.0) {
            return Err(Error::Config("filter norm must be positive".into()));
        }
        let modulus = filter_norm / n as f64;
        let mut r = rng::stream(seed, &[rng::salt::FILTER_INIT]);
        let filter = ComplexMatrix::from_fn(n, n, |_, _| {
            Complex64::from_polar(modulus, rng::uniform_phase(&mut r))
        });

        let input = 2 * omega.len() * subcarriers;
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(n * n);
        let mut r = rng::stream(seed, &[rng::salt::FC_INIT]);
        let fc = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut r))
            })
            .collect();

        let subcarrier_weights = (subcarriers > 1)
            .then(|| vec![1.0 / (subcarriers as f64).sqrt(); subcarriers]);

        Ok(Self {
            n,
            omega,
            filter,
            fc,
            subcarrier_weights,
            omega_conv: filter_norm,
            resolution,
            stage: Stage::Init,
            seed,
        })
    }

    pub fn measurements(&self) -> usize {
        self.omega.len()
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarrier_weights.as_ref().map_or(1, Vec::len)
    }

    pub fn input_dim(&self) -> usize {
        2 * self.measurements() * self.subcarriers()
    }

    pub fn classes(&self) -> usize {
        self.n * self.n
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.fc[0].ncols()];
        d.extend(self.fc.iter().map(|w| w.nrows()));
        d
    }

    fn subcarrier_gain(&self, s: usize) -> f64 {
        self.subcarrier_weights.as_ref().map_or(1.0, |p| p[s])
    }

    /// The base matrix the transmitter would apply.
    pub fn base_matrix(&self) -> Result<BaseMatrix> {
        BaseMatrix::new(self.filter.clone(), self.resolution)
    }

    /// Structural consistency checks.
    pub fn validate(&self) -> Result<()> {
        if self.filter.rows() != self.n || self.filter.cols() != self.n {
            return Err(Error::dim("filter shape does not match N"));
        }
        if self.omega.side() != self.n {
            return Err(Error::dim("subsampling grid does not match N"));
        }
        let dims = self.dims();
        if dims[0] != self.input_dim() {
            return Err(Error::dim(format!(
                "first layer expects {} inputs but the measurement layer yields {}",
                dims[0],
                self.input_dim()
            )));
        }
        for (i, w) in self.fc.windows(2).enumerate() {
            if w[0].nrows() != w[1].ncols() {
                return Err(Error::dim(format!("layers {i} and {} do not chain", i + 1)));
            }
        }
        if *dims.last().expect("non-empty") != self.classes() {
            return Err(Error::dim("output layer must have N^2 classes"));
        }
        Ok(())
    }
}

/// The measurement layer evaluated through the transform identity
/// `dft2(H (*) P) = dft2(H) .* N conj(dft2(P))`.
struct MeasurementLayer {
    fft: Fft2,
    /// `N conj(dft2(P)) / omega_conv`.
    response: Vec<Complex64>,
}

impl MeasurementLayer {
    fn new(params: &ModelParams) -> Self {
        let n = params.n;
        let mut fft = Fft2::new(n);
        let mut z = params.filter.as_slice().to_vec();
        fft.dft2(&mut z);
        let k = n as f64 / params.omega_conv;
        let response = z.iter().map(|v| v.conj() * k).collect();
        Self { fft, response }
    }

    /// Clean measurements of every subcarrier; the channel spectra are
    /// appended to `spectra` when given.
    fn measure(
        &mut self,
        params: &ModelParams,
        sample: &ChannelSample,
        mut spectra: Option<&mut Vec<Complex64>>,
    ) -> Result<Vec<Complex64>> {
        let mats = sample.matrices();
        if mats.len() != params.subcarriers() {
            return Err(Error::dim(format!(
                "model expects {} subcarriers, sample has {}",
                params.subcarriers(),
                mats.len()
            )));
        }
        if sample.side() != params.n {
            return Err(Error::dim(format!(
                "model is for N = {}, sample has N = {}",
                params.n,
                sample.side()
            )));
        }
        let n = params.n;
        let mut out = Vec::with_capacity(params.measurements() * mats.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        for h in mats {
            buf.copy_from_slice(h.as_slice());
            self.fft.dft2(&mut buf);
            if let Some(sp) = spectra.as_mut() {
                sp.extend_from_slice(&buf);
            }
            for (v, z) in buf.iter_mut().zip(&self.response) {
                *v *= z;
            }
            self.fft.idft2(&mut buf);
            out.extend(params.omega.shifts().iter().map(|&(r, c)| buf[r * n + c]));
        }
        Ok(out)
    }
}

/// Noise-free measurements radiated with `P / omega_conv`, before the
/// subcarrier gains, concatenated subcarrier-major.
pub fn clean_measurements(params: &ModelParams, sample: &ChannelSample) -> Result<Vec<Complex64>> {
    MeasurementLayer::new(params).measure(params, sample, None)
}

/// [`clean_measurements`] for many samples, sharing one transform plan.
pub fn clean_measurements_batch(params: &ModelParams, samples: &[ChannelSample]) -> Result<Vec<Vec<Complex64>>> {
    let mut layer = MeasurementLayer::new(params);
    samples.iter().map(|s| layer.measure(params, s, None)).collect()
}

fn add_noise(params: &ModelParams, clean: &[Complex64], noise_var: f64, noise_seed: u64) -> Measurement {
    let m = params.measurements();
    let mut r = rng::stream(noise_seed, &[rng::salt::TRAIN_NOISE]);
    let y = clean
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut v = g * params.subcarrier_gain(k / m);
            if noise_var > 0.0 {
                v += rng::complex_gaussian(&mut r, noise_var);
            }
            v
        })
        .collect();
    Measurement { y, noise_var }
}

/// Received measurement `y = p_s G + v` for every subcarrier.
pub fn receive(
    params: &ModelParams,
    sample: &ChannelSample,
    noise_var: f64,
    noise_seed: u64,
) -> Result<(Measurement, Vec<Complex64>)> {
    if !(noise_var >= 0.0) {
        return Err(Error::invalid("noise variance must be non-negative"));
    }
    let clean = clean_measurements(params, sample)?;
    Ok((add_noise(params, &clean, noise_var, noise_seed), clean))
}

/// `[Re y_0; Im y_0; Re y_1; Im y_1; ...]`, one block per subcarrier.
pub fn feature_vector(y: &[Complex64], measurements: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(2 * y.len());
    for block in y.chunks(measurements) {
        f.extend(block.iter().map(|z| z.re));
        f.extend(block.iter().map(|z| z.im));
    }
    f
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Classifier activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Clean measurements per sample (subcarrier-major).
    pub clean: Vec<Vec<Complex64>>,
    /// Beamspace of every subcarrier per sample, reused by the filter
    /// gradient.
    spectra: Vec<Vec<Complex64>>,
    /// Scaled classifier input, `(batch, input_dim)`.
    pub input: Array2<f64>,
    /// Pre-activations of every layer; the last one holds the logits.
    pub pre: Vec<Array2<f64>>,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probs.rows().into_iter().map(argmax).collect()
    }
}

/// Runs the classifier on a `(batch, input_dim)` matrix of raw features.
fn classify(params: &ModelParams, features: Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
    let input = features;
    let mut pre = Vec::with_capacity(params.fc.len());
    let mut act = input.clone();
    for (i, w) in params.fc.iter().enumerate() {
        let z = act.dot(&w.t());
        if i + 1 < params.fc.len() {
            act = relu(&z);
        }
        pre.push(z);
    }
    let probs = softmax_rows(pre.last().expect("layers"));
    (input, pre, probs)
}

/// Forward pass over a batch. `noise_seeds[b]` keys the noise of sample `b`.
pub fn forward_batch(
    params: &ModelParams,
    samples: &[&ChannelSample],
    noise_var: f64,
    noise_seeds: &[u64],
) -> Result<ForwardCache> {
    if samples.len() != noise_seeds.len() {
        return Err(Error::dim("one noise seed per sample is required"));
    }
    let d = params.input_dim();
    if params.fc.first().map(|w| w.ncols()) != Some(d) {
        return Err(Error::dim("classifier input does not match the measurement layer"));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::invalid("noise variance must be non-negative"));
    }
    let mut layer = MeasurementLayer::new(params);
    let mut features = Array2::<f64>::zeros((samples.len(), d));
    let mut clean = Vec::with_capacity(samples.len());
    let mut spectra = Vec::with_capacity(samples.len());
    for (b, (s, &seed)) in samples.iter().zip(noise_seeds).enumerate() {
        let mut sp = Vec::new();
        let g = layer.measure(params, s, Some(&mut sp))?;
        let y = add_noise(params, &g, noise_var, seed);
        let f = feature_vector(&y.y, params.measurements());
        features.row_mut(b).assign(&Array1::from(f));
        clean.push(g);
        spectra.push(sp);
    }
    let (input, pre, probs) = classify(params, features);
    Ok(ForwardCache { clean, spectra, input, pre, probs })
}

/// Result of a single-sample forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
    pub cache: ForwardCache,
}

pub fn forward(sample: &ChannelSample, params: &ModelParams, noise_var: f64, seed: u64) -> Result<Forward> {
    let cache = forward_batch(params, &[sample], noise_var, &[seed])?;
    let features = cache.input.row(0).to_vec();
    Ok(Forward {
        probabilities: cache.probs.row(0).to_vec(),
        logits: cache.logits().row(0).to_vec(),
        features,
        cache,
    })
}

/// Mean cross-entropy and the number of clamped probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub clamped: usize,
}

pub fn loss(probs: &Array2<f64>, labels: &[usize]) -> Result<LossValue> {
    if probs.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::dim("one label per probability row is required"));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        if y >= row.len() {
            return Err(Error::Range(format!("label {y} outside {} classes", row.len())));
        }
        let p = row[y];
        if p < LOSS_EPSILON {
            clamped += 1;
        }
        total -= p.max(LOSS_EPSILON).ln();
    }
    Ok(LossValue {
        value: total / labels.len() as f64,
        clamped,
    })
}

/// Gradients of the mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `dJ/dP_R + j dJ/dP_I`.
    pub filter: ComplexMatrix,
    pub fc: Vec<Array2<f64>>,
    /// Per-measurement gradient of the diagonal scaling layer, length
    /// `M * N_sc`; present for wideband models.
    pub subcarrier_raw: Option<Vec<f64>>,
}

impl Gradients {
    /// `dJ/dp_s`, summing each subcarrier block.
    pub fn subcarrier(&self, measurements: usize) -> Option<Vec<f64>> {
        self.subcarrier_raw
            .as_ref()
            .map(|g| g.chunks(measurements).map(|b| b.iter().sum()).collect())
    }
}

pub fn backward(
    params: &ModelParams,
    samples: &[&ChannelSample],
    cache: &ForwardCache,
    labels: &[usize],
) -> Result<Gradients> {
    let batch = samples.len();
    if labels.len() != batch || cache.probs.nrows() != batch {
        return Err(Error::dim("batch sizes disagree"));
    }
    let layers = params.fc.len();

    // softmax + mean cross-entropy
    let mut delta = cache.probs.clone();
    for (b, &y) in labels.iter().enumerate() {
        delta[[b, y]] -= 1.0;
    }
    delta /= batch as f64;

    let mut fc_grads = vec![Array2::<f64>::zeros((0, 0)); layers];
    for i in (0..layers).rev() {
        let prev = if i == 0 { cache.input.clone() } else { relu(&cache.pre[i - 1]) };
        fc_grads[i] = delta.t().dot(&prev);
        let back = delta.dot(&params.fc[i]);
        delta = if i == 0 {
            back
        } else {
            let mut d = back;
            d.zip_mut_with(&cache.pre[i - 1], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            d
        };
    }
    let dfeat = delta;
    let tx = 1.0 / params.omega_conv;

    // The filter gradient dJ/dP_R + j dJ/dP_I is sum_m conj(d_m) H(a + r_m, b + c_m),
    // the correlation of H with the sparse image D(r_m, c_m) = d_m. Its
    // spectra are accumulated over the batch and inverted once.
    let n = params.n;
    let m = params.measurements();
    let mut fft = Fft2::new(n);
    let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
    let mut d_img = vec![Complex64::new(0.0, 0.0); n * n];
    let mut sub_raw = params.subcarrier_weights.as_ref().map(|_| vec![0.0; m * params.subcarriers()]);

    for b in 0..batch {
        let row = dfeat.row(b);
        if cache.spectra.len() != batch || cache.spectra[b].len() != n * n * params.subcarriers() {
            return Err(Error::dim("forward cache does not match the model"));
        }
        for s in 0..params.subcarriers() {
            let gain = params.subcarrier_gain(s);
            let base = 2 * m * s;
            d_img.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            let mut any = false;
            for (k, &(r, c)) in params.omega.shifts().iter().enumerate() {
                let d_re = row[base + k];
                let d_im = row[base + m + k];
                if let Some(raw) = sub_raw.as_mut() {
                    let g = cache.clean[b][s * m + k];
                    raw[s * m + k] += d_re * g.re + d_im * g.im;
                }
                let d = Complex64::new(d_re, d_im) * (tx * gain);
                any |= d.re != 0.0 || d.im != 0.0;
                d_img[r * n + c] = d;
            }
            if !any {
                continue;
            }
            fft.dft2(&mut d_img);
            let x = &cache.spectra[b][s * n * n..(s + 1) * n * n];
            for ((a, xv), dv) in acc.iter_mut().zip(x).zip(&d_img) {
                *a += xv * dv.conj();
            }
        }
    }
    let scale = n as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    fft.idft2(&mut acc);

    Ok(Gradients {
        filter: ComplexMatrix::from_vec(n, n, acc)?,
        fc: fc_grads,
        subcarrier_raw: sub_raw,
    })
}

/// Plain gradient step `w <- w - lr g` on every parameter group.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    for (w, g) in params.filter.as_mut_slice().iter_mut().zip(grads.filter.as_slice()) {
        *w -= g * lr;
    }
    for (w, g) in params.fc.iter_mut().zip(&grads.fc) {
        w.scaled_add(-lr, g);
    }
    let m = params.measurements();
    if let (Some(p), Some(g)) = (params.subcarrier_weights.as_mut(), grads.subcarrier(m)) {
        for (w, g) in p.iter_mut().zip(g) {
            *w -= lr * g;
        }
    }
    Ok(())
}

/// Projects the filter onto `{ |P(k,l)| = omega / N, phase on the q-bit grid }`.
pub fn pgd_project_filter(filter: &ComplexMatrix, resolution: Resolution, omega_conv: f64) -> Result<ComplexMatrix> {
    let n = filter.side()?;
    if !(omega_conv > 0.0) {
        return Err(Error::invalid("filter norm must be positive"));
    }
    let modulus = omega_conv / n as f64;
    let mut out = filter.clone();
    for (i, z) in out.as_mut_slice().iter_mut().enumerate() {
        if z.norm() == 0.0 {
            return Err(Error::invalid(format!("filter entry {i} is zero; its phase is undefined")));
        }
        let phase = match resolution {
            Resolution::Bits(q) => quantize_angle(z.arg(), q),
            Resolution::Unconstrained => z.arg().rem_euclid(TAU),
        };
        *z = unit_phasor(phase) * modulus;
    }
    Ok(out)
}

/// Block-constant subcarrier amplitudes from per-measurement weights:
/// each block takes the mean absolute weight, then `sum p_s^2 = 1`.
pub fn project_subcarrier_weights(raw: &[f64], measurements: usize) -> Result<Vec<f64>> {
    if measurements == 0 || raw.is_empty() || raw.len() % measurements != 0 {
        return Err(Error::dim(format!(
            "{} weights do not split into blocks of {measurements}",
            raw.len()
        )));
    }
    let blocks: Vec<f64> = raw
        .chunks(measurements)
        .map(|b| b.iter().map(|w| w.abs()).sum::<f64>() / measurements as f64)
        .collect();
    let norm = blocks.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::invalid("all subcarrier weights are zero"));
    }
    Ok(blocks.into_iter().map(|v| v / norm).collect())
}

/// Expands `p_s` to one weight per measurement.
pub fn expand_subcarrier_weights(p: &[f64], measurements: usize) -> Vec<f64> {
    p.iter()
        .flat_map(|&v| std::iter::repeat_n(v, measurements))
        .collect()
}

/// Classifier output for one received measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Classification {
    /// Index of the largest logit; ties go to the smallest index.
    pub fn class(&self) -> usize {
        argmax(ndarray::ArrayView1::from(&self.logits[..]))
    }
}

pub fn classify_measurement(y: &Measurement, params: &ModelParams) -> Result<Classification> {
    let expected = params.measurements() * params.subcarriers();
    if y.len() != expected {
        return Err(Error::dim(format!(
            "expected {expected} measurements, got {}",
            y.len()
        )));
    }
    let f = feature_vector(&y.y, params.measurements());
    let features = Array2::from_shape_vec((1, f.len()), f).expect("row vector");
    let (_, pre, probs) = classify(params, features);
    Ok(Classification {
        logits: pre.last().expect("layers").row(0).to_vec(),
        probabilities: probs.row(0).to_vec(),
    })
}

/// Beam `(i, j)` predicted from a received measurement vector.
pub fn predict_beam(y: &Measurement, params: &ModelParams) -> Result<(usize, usize)> {
    let class = classify_measurement(y, params)?.class();
    Ok((class / params.n, class % params.n))
}

/// Predictions for a batch of measurements.
pub fn predict_batch(ys: &[Measurement], params: &ModelParams) -> Result<Vec<(usize, usize)>> {
    let expected = params.measurements() * params.subcarriers();
    let mut features = Array2::<f64>::zeros((ys.len(), params.input_dim()));
    for (b, y) in ys.iter().enumerate() {
        if y.len() != expected {
            return Err(Error::dim(format!("expected {expected} measurements, got {}", y.len())));
        }
        features
            .row_mut(b)
            .assign(&Array1::from(feature_vector(&y.y, params.measurements())));
    }
    let (_, pre, _) = classify(params, features);
    Ok(pre
        .last()
        .expect("layers")
        .rows()
        .into_iter()
        .map(|r| {
            let c = argmax(r);
            (c / params.n, c % params.n)
        })
        .collect())
}

/// Optimiser and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate halves every this many epochs.
    pub lr_halving_epochs: usize,
    pub momentum: f64,
    /// Filter projection interval `N_c` in mini-batches.
    pub quant_interval: usize,
    pub resolution: Resolution,
    /// Training SNR in dB; `None` trains noise-free.
    pub train_snr_db: Option<f64>,
    pub measurements: usize,
    pub hidden: Vec<usize>,
    /// Filter norm at initialisation.
    pub filter_norm: f64,
    pub seed: u64,
    /// Stops after this many mini-batches in total.
    pub max_batches: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-3,
            lr_halving_epochs: 100,
            momentum: 0.9,
            quant_interval: 10,
            resolution: Resolution::Unconstrained,
            train_snr_db: None,
            measurements: 40,
            hidden: DEFAULT_HIDDEN.to_vec(),
            filter_norm: 1.0,
            seed: 0,
            max_batches: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 && self.max_batches.is_none() {
            // zero epochs is allowed and leaves the parameters untouched
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.quant_interval == 0 {
            return Err(Error::Config("quantisation interval must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rate must be positive and momentum in [0, 1)".into()));
        }
        if self.lr_halving_epochs == 0 {
            return Err(Error::Config("learning-rate halving period must be positive".into()));
        }
        Ok(())
    }

    pub fn noise_var(&self) -> f64 {
        self.train_snr_db.map_or(0.0, |snr| 10f64.powf(-snr / 10.0))
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.lr_halving_epochs) as i32)
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub clamped: usize,
    pub projections: usize,
    pub batches: usize,
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn on_filter_projection(&mut self, _params: &ModelParams) {}
    /// `weights` holds one value per subcarrier, `expanded` the per-measurement
    /// vector the next step starts from.
    fn on_subcarrier_projection(&mut self, _weights: &[f64], _expanded: &[f64]) {}
    fn on_batch(&mut self, _batch: usize, _loss: f64) {}
    fn on_epoch(&mut self, _epoch: usize, _loss: f64, _accuracy: f64) {}
}

/// Observer that logs epoch summaries.
pub struct LogObserver;

impl TrainObserver for LogObserver {
    fn on_epoch(&mut self, epoch: usize, loss: f64, accuracy: f64) {
        log::info!("epoch {epoch:4}  loss {loss:.5}  train-acc {accuracy:.4}");
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
struct Momentum {
    filter: Vec<Complex64>,
    fc: Vec<Array2<f64>>,
    sub: Vec<f64>,
}

impl Momentum {
    fn new(params: &ModelParams) -> Self {
        Self {
            filter: vec![Complex64::new(0.0, 0.0); params.n * params.n],
            fc: params.fc.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            sub: vec![0.0; params.measurements() * params.subcarriers()],
        }
    }
}

fn check_dataset(samples: &[ChannelSample], params: &ModelParams) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    if first.side() != params.n {
        return Err(Error::Config(format!(
            "dataset has N = {}, model has N = {}",
            first.side(),
            params.n
        )));
    }
    if first.matrices().len() != params.subcarriers() {
        return Err(Error::Config(format!(
            "dataset has {} subcarriers, model expects {}",
            first.matrices().len(),
            params.subcarriers()
        )));
    }
    Ok(())
}

struct Groups {
    filter: bool,
    subcarriers: bool,
}

fn run_epochs(
    samples: &[ChannelSample],
    params: &mut ModelParams,
    cfg: &TrainConfig,
    stage: Stage,
    groups: Groups,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    let noise_var = cfg.noise_var();
    let m = params.measurements();
    let mut vel = Momentum::new(params);
    let mut sub_raw = params
        .subcarrier_weights
        .as_ref()
        .map(|p| expand_subcarrier_weights(p, m));
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut t = 0usize;
    let stage_key = stage.as_u8() as u64;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[rng::salt::SHUFFLE, stage_key, epoch as u64]));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);

        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_batches.is_some_and(|max| t >= max) {
                break 'epochs;
            }
            if groups.filter && t % cfg.quant_interval == 0 {
                params.filter = pgd_project_filter(&params.filter, params.resolution, params.omega_conv)?;
                report.projections += 1;
                observer.on_filter_projection(params);
            }
            let batch: Vec<&ChannelSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.class()).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| rng::derive_seed(cfg.seed, &[stage_key, epoch as u64, i as u64]))
                .collect();
            let cache = forward_batch(params, &batch, noise_var, &seeds)?;
            let lv = loss(&cache.probs, &labels)?;
            report.clamped += lv.clamped;
            let grads = backward(params, &batch, &cache, &labels)?;

            let mu = cfg.momentum;
            for (w, g) in params.fc.iter_mut().zip(&grads.fc).zip(vel.fc.iter_mut()).map(|((w, g), v)| {
                v.zip_mut_with(g, |v, &g| *v = mu * *v + g);
                (w, v)
            }) {
                w.scaled_add(-lr, g);
            }
            if groups.filter {
                for ((w, g), v) in params
                    .filter
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grads.filter.as_slice())
                    .zip(vel.filter.iter_mut())
                {
                    *v = *v * mu + g;
                    *w -= *v * lr;
                }
            }
            if groups.subcarriers {
                if let (Some(raw), Some(g)) = (sub_raw.as_mut(), grads.subcarrier_raw.as_ref()) {
                    for ((w, g), v) in raw.iter_mut().zip(g).zip(vel.sub.iter_mut()) {
                        *v = mu * *v + g;
                        *w -= lr * *v;
                    }
                    let p = project_subcarrier_weights(raw, m)?;
                    *raw = expand_subcarrier_weights(&p, m);
                    observer.on_subcarrier_projection(&p, raw);
                    params.subcarrier_weights = Some(p);
                }
            }

            loss_sum += lv.value * batch.len() as f64;
            correct += cache
                .predictions()
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            seen += batch.len();
            observer.on_batch(t, lv.value);
            t += 1;
        }
        if seen > 0 {
            let (l, a) = (loss_sum / seen as f64, correct as f64 / seen as f64);
            report.epoch_loss.push(l);
            report.epoch_accuracy.push(a);
            observer.on_epoch(epoch, l, a);
        }
    }
    report.batches = t;
    Ok(report)
}

/// Trained parameters with their statistics.
#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub report: TrainReport,
}

fn check_power(samples: &[ChannelSample], per_sample: bool) -> Result<()> {
    let n = samples[0].side() as f64;
    let target = n * n;
    if per_sample {
        for (i, s) in samples.iter().enumerate() {
            if (s.power() / target - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "stage 1 needs per-channel power N^2; sample {i} has {}",
                    s.power()
                )));
            }
        }
    } else {
        let mean = samples.iter().map(ChannelSample::power).sum::<f64>() / samples.len() as f64;
        if (mean / target - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "stage 2 needs mean channel power N^2; dataset has {mean}"
            )));
        }
    }
    Ok(())
}

/// Stage 1 from a fresh initialisation.
pub fn train_stage1(samples: &[ChannelSample], cfg: &TrainConfig) -> Result<Trained> {
    train_stage1_with(samples, cfg, &mut LogObserver)
}

pub fn train_stage1_with(
    samples: &[ChannelSample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Trained> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    let n = first.side();
    let omega = crate::sensing::sample_omega(n, cfg.measurements, cfg.seed)?;
    let params = ModelParams::init(
        n,
        omega,
        first.matrices().len(),
        &cfg.hidden,
        cfg.resolution,
        cfg.filter_norm,
        cfg.seed,
    )?;
    train_stage1_from(params, samples, cfg, observer)
}

/// Stage 1 from given initial parameters: noise-free training of the filter
/// and provisional classifier on unit-power channels. The returned filter is
/// projected and rescaled to unit modulus (`||P||_F = N`) with `omega_conv`
/// following it, so the radiated weights and the classifier output are
/// unchanged.
pub fn train_stage1_from(
    mut params: ModelParams,
    samples: &[ChannelSample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Trained> {
    cfg.validate()?;
    if cfg.train_snr_db.is_some() {
        return Err(Error::Config("stage 1 trains noise-free".into()));
    }
    check_dataset(samples, &params)?;
    check_power(samples, true)?;
    params.validate()?;
    params.resolution = cfg.resolution;

    let report = run_epochs(
        samples,
        &mut params,
        cfg,
        Stage::One,
        Groups { filter: true, subcarriers: false },
        observer,
    )?;

    params.filter = pgd_project_filter(&params.filter, params.resolution, params.omega_conv)?;
    let n = params.n as f64;
    params.filter.scale_in_place(n / params.omega_conv);
    params.omega_conv = n;
    params.stage = Stage::One;
    Ok(Trained { params, report })
}

/// Stage 2: frozen filter, classifier (and subcarrier allocation)
/// retrained on noisy, commonly scaled channels.
pub fn train_stage2(samples: &[ChannelSample], cfg: &TrainConfig, stage1: Option<&ModelParams>) -> Result<Trained> {
    train_stage2_with(samples, cfg, stage1, &mut LogObserver)
}

pub fn train_stage2_with(
    samples: &[ChannelSample],
    cfg: &TrainConfig,
    stage1: Option<&ModelParams>,
    observer: &mut dyn TrainObserver,
) -> Result<Trained> {
    cfg.validate()?;
    let start = stage1.ok_or_else(|| Error::Config("stage 2 needs a stage-1 model".into()))?;
    if start.stage != Stage::One {
        return Err(Error::Config(format!(
            "stage 2 starts from a stage-1 model, got stage {}",
            start.stage.as_u8()
        )));
    }
    let mut params = start.clone();
    check_dataset(samples, &params)?;
    check_power(samples, false)?;
    params.validate()?;

    let report = run_epochs(
        samples,
        &mut params,
        cfg,
        Stage::Two,
        Groups { filter: false, subcarriers: true },
        observer,
    )?;
    params.stage = Stage::Two;
    Ok(Trained { params, report })
}

/// Fraction of samples whose noise-free prediction matches the label.
pub fn accuracy(params: &ModelParams, samples: &[ChannelSample], noise_var: f64, seed: u64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut correct = 0;
    for (chunk_idx, chunk) in samples.chunks(256).enumerate() {
        let refs: Vec<&ChannelSample> = chunk.iter().collect();
        let seeds: Vec<u64> = (0..chunk.len())
            .map(|i| rng::derive_seed(seed, &[(chunk_idx * 256 + i) as u64]))
            .collect();
        let cache = forward_batch(params, &refs, noise_var, &seeds)?;
        correct += cache
            .predictions()
            .iter()
            .zip(chunk)
            .filter(|(p, s)| **p == s.class())
            .count();
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean loss of a batch, used by finite-difference checks.
pub fn batch_loss(
    params: &ModelParams,
    samples: &[&ChannelSample],
    noise_var: f64,
    seeds: &[u64],
) -> Result<f64> {
    let cache = forward_batch(params, samples, noise_var, seeds)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.class()).collect();
    Ok(loss(&cache.probs, &labels)?.value)
}

/// Per-class column sums, handy for inspecting predictions.
pub fn class_histogram(predictions: &[usize], classes: usize) -> Array1<f64> {
    let mut h = Array1::<f64>::zeros(classes);
    for &p in predictions {
        h[p] += 1.0;
    }
    let total = h.sum_axis(Axis(0)).into_scalar();
    if total > 0.0 {
        h /= total;
    }
    h
}
