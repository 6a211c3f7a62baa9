//! Alignment metrics and the SNR x M sweep harness.
//!
//! Wideband samples are scored on the beam power averaged over subcarriers,
//! the same quantity that defines their labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::baseline::{random_phase_matrix, OmpConfig, OmpSolver};
use crate::channel::{beamspace, ChannelSample};
use crate::error::{Error, Result};
use crate::network::{self, ModelParams};
use crate::rng;
use crate::sensing::{sample_omega, Measurement, Resolution};

/// Mean `|X_s(i, j)|^2` over the subcarriers of a sample.
pub fn beam_power(sample: &ChannelSample, beam: (usize, usize)) -> Result<f64> {
    let n = sample.side();
    if beam.0 >= n || beam.1 >= n {
        return Err(Error::Range(format!("beam {beam:?} outside the {n}x{n} codebook")));
    }
    let mats = sample.matrices();
    let mut total = 0.0;
    for h in mats {
        total += beamspace(h)?[beam].norm_sqr();
    }
    Ok(total / mats.len() as f64)
}

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0) {
        return Err(Error::invalid(format!("noise variance {noise_var} must be positive")));
    }
    Ok(())
}

/// Post-beamforming SNR `|X(i, j)|^2 / sigma^2`.
pub fn snr_bf(sample: &ChannelSample, beam: (usize, usize), noise_var: f64) -> Result<f64> {
    check_noise(noise_var)?;
    Ok(beam_power(sample, beam)? / noise_var)
}

/// `log2(1 + SNR_BF)` in bit/s/Hz.
pub fn rate(sample: &ChannelSample, beam: (usize, usize), noise_var: f64) -> Result<f64> {
    Ok(snr_bf(sample, beam, noise_var)?.ln_1p() / std::f64::consts::LN_2)
}

/// Loss of the chosen beam against the best one, in dB. A beam that falls
/// exactly on a zero of the beamspace gives `+inf`.
pub fn beamforming_loss(sample: &ChannelSample, beam: (usize, usize)) -> Result<f64> {
    let best = beam_power(sample, sample.label)?;
    let got = beam_power(sample, beam)?;
    if got == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((10.0 * (best / got).log10()).max(0.0))
}

pub fn alignment_probability(predictions: &[(usize, usize)], labels: &[(usize, usize)]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("predictions and labels differ in length"));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("alignment probability of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// A method under evaluation.
#[derive(Debug, Clone)]
pub enum MethodKind {
    /// Trained models, looked up by their measurement count.
    Learned(Vec<ModelParams>),
    /// Random-phase base matrix with OMP recovery.
    RandomOmp { resolution: Resolution, omp: OmpConfig },
    /// Exhaustive search on the noise-free channel.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct Method {
    pub name: String,
    pub kind: MethodKind,
}

impl Method {
    pub fn learned(name: impl Into<String>, models: Vec<ModelParams>) -> Self {
        Self { name: name.into(), kind: MethodKind::Learned(models) }
    }

    pub fn random_omp(resolution: Resolution, omp: OmpConfig) -> Self {
        Self { name: "random_omp".into(), kind: MethodKind::RandomOmp { resolution, omp } }
    }

    pub fn oracle() -> Self {
        Self { name: "oracle".into(), kind: MethodKind::Oracle }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub measurements: Vec<usize>,
    pub seed: u64,
    /// Worker threads for per-sample work; results do not depend on it.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub snr_db: f64,
    pub m: usize,
    pub method: String,
    pub alignment_prob: f64,
    pub bf_loss_db: f64,
    pub rate: f64,
    /// Samples whose loss was infinite and left out of the mean.
    pub infinite_loss: usize,
    /// SHA-256 over the noise draws fed to this row.
    pub noise_hash: String,
    pub predictions: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub metadata: BTreeMap<String, String>,
}

/// SNR in dB to noise variance with unit transmit power.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Noise for one `(sample, snr)` pair. Shorter vectors are prefixes of
/// longer ones, so every method and `M` shares the same draws.
pub fn paired_noise(seed: u64, sample: usize, snr_idx: usize, len: usize, noise_var: f64) -> Vec<Complex64> {
    let mut r = rng::stream(seed, &[rng::salt::EVAL_NOISE, sample as u64, snr_idx as u64]);
    (0..len).map(|_| rng::complex_gaussian(&mut r, noise_var)).collect()
}

/// Maps `f` over `0..count` on up to `threads` scoped workers, keeping the
/// output in index order.
pub fn parallel_map<T: Send>(count: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.max(1).min(count.max(1));
    if threads == 1 {
        return (0..count).map(&f).collect();
    }
    let chunk = count.div_ceil(threads);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || (t * chunk..((t + 1) * chunk).min(count)).map(f).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Splits `items` into at most `threads` contiguous chunks, maps each chunk
/// and concatenates the results in order.
pub fn parallel_chunks<I: Sync, T: Send>(
    items: &[I],
    threads: usize,
    f: impl Fn(&[I]) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let threads = threads.max(1).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    let parts = parallel_map(items.len().div_ceil(chunk), threads, |t| {
        f(&items[t * chunk..((t + 1) * chunk).min(items.len())])
    })?;
    Ok(parts.into_iter().flatten().collect())
}

fn hash_noise(h: &mut Sha256, v: &[Complex64]) {
    for z in v {
        h.update(z.re.to_le_bytes());
        h.update(z.im.to_le_bytes());
    }
}

/// Per-method state prepared once per `M`.
enum Prepared<'a> {
    Learned { params: &'a ModelParams, clean: Vec<Vec<Complex64>> },
    Omp { solver: OmpSolver, clean: Vec<Vec<Vec<Complex64>>>, omp: OmpConfig },
    Oracle,
}

fn prepare<'a>(
    method: &'a Method,
    samples: &[ChannelSample],
    m: usize,
    cfg: &SweepConfig,
) -> Result<Prepared<'a>> {
    let n = samples[0].side();
    match &method.kind {
        MethodKind::Learned(models) => {
            let params = models
                .iter()
                .find(|p| p.measurements() == m)
                .ok_or_else(|| Error::MissingModel { method: method.name.clone(), m })?;
            if params.n != n {
                return Err(Error::Config(format!(
                    "model '{}' is for N = {}, dataset has N = {n}",
                    method.name, params.n
                )));
            }
            let clean = parallel_chunks(samples, cfg.threads, |chunk| network::clean_measurements_batch(params, chunk))?;
            Ok(Prepared::Learned { params, clean })
        }
        MethodKind::RandomOmp { resolution, omp } => {
            let key = rng::derive_seed(cfg.seed, &[rng::salt::RANDOM_PHASE, m as u64]);
            let p = random_phase_matrix(n, *resolution, key)?;
            let omega = sample_omega(n, m, key)?;
            let tx = p.radiated();
            let solver = OmpSolver::new(tx.matrix(), &omega)?;
            let clean = parallel_map(samples.len(), cfg.threads, |i| {
                samples[i]
                    .matrices()
                    .iter()
                    .map(|h| crate::sensing::subsample_xcorr(h, tx.matrix(), &omega))
                    .collect()
            })?;
            Ok(Prepared::Omp { solver, clean, omp: *omp })
        }
        MethodKind::Oracle => Ok(Prepared::Oracle),
    }
}

impl Prepared<'_> {
    fn noise_len(&self, m: usize, subcarriers: usize) -> usize {
        match self {
            Prepared::Oracle => 0,
            _ => m * subcarriers,
        }
    }

    fn predict(&self, sample: &ChannelSample, index: usize, noise: &[Complex64], noise_var: f64) -> Result<(usize, usize)> {
        match self {
            Prepared::Learned { params, clean } => {
                let m = params.measurements();
                let y: Vec<Complex64> = clean[index]
                    .iter()
                    .enumerate()
                    .map(|(k, g)| {
                        let gain = params.subcarrier_weights.as_ref().map_or(1.0, |p| p[k / m]);
                        g * gain + noise[k]
                    })
                    .collect();
                network::predict_beam(&Measurement { y, noise_var }, params)
            }
            Prepared::Omp { solver, clean, omp } => {
                let m = solver.measurements();
                let n = solver.side();
                let per_sc = &clean[index];
                if per_sc.len() == 1 {
                    let y = per_sc[0].iter().zip(noise).map(|(g, v)| g + v).collect();
                    return Ok(solver.solve(&Measurement { y, noise_var }, omp)?.beam);
                }
                // wideband: pool recovered energy over subcarriers
                let mut energy = vec![0.0; n * n];
                for (s, g) in per_sc.iter().enumerate() {
                    let y = g.iter().zip(&noise[s * m..(s + 1) * m]).map(|(g, v)| g + v).collect();
                    let out = solver.solve(&Measurement { y, noise_var }, omp)?;
                    for (&j, c) in out.support.iter().zip(&out.coefficients) {
                        energy[j] += c.norm_sqr();
                    }
                }
                let mut best = 0;
                for (j, &e) in energy.iter().enumerate() {
                    if e > energy[best] {
                        best = j;
                    }
                }
                Ok((best / n, best % n))
            }
            Prepared::Oracle => Ok(sample.label),
        }
    }
}

struct SampleResult {
    beam: (usize, usize),
    loss: f64,
    rate: f64,
    noise: Vec<Complex64>,
}

/// One row per `(snr, M, method)`, in that nesting order.
pub fn sweep(samples: &[ChannelSample], methods: &[Method], cfg: &SweepConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if cfg.snr_db.is_empty() || cfg.measurements.is_empty() || methods.is_empty() {
        return Err(Error::Config("SNR grid, M grid and method list must be non-empty".into()));
    }
    let subcarriers = samples[0].matrices().len();
    let labels: Vec<(usize, usize)> = samples.iter().map(|s| s.label).collect();

    let mut prepared: BTreeMap<(usize, usize), Prepared> = BTreeMap::new();
    for &m in &cfg.measurements {
        for (k, method) in methods.iter().enumerate() {
            prepared.insert((m, k), prepare(method, samples, m, cfg)?);
        }
    }

    let mut report = EvalReport::default();
    report.metadata.insert("seed".into(), cfg.seed.to_string());
    report.metadata.insert("samples".into(), samples.len().to_string());

    for (t, &snr) in cfg.snr_db.iter().enumerate() {
        let noise_var = noise_variance(snr);
        for &m in &cfg.measurements {
            for (k, method) in methods.iter().enumerate() {
                let prep = &prepared[&(m, k)];
                let len = prep.noise_len(m, subcarriers);
                let results = parallel_map(samples.len(), cfg.threads, |i| {
                    let noise = paired_noise(cfg.seed, i, t, len, noise_var);
                    let beam = prep.predict(&samples[i], i, &noise, noise_var)?;
                    Ok(SampleResult {
                        beam,
                        loss: beamforming_loss(&samples[i], beam)?,
                        rate: rate(&samples[i], beam, noise_var)?,
                        noise,
                    })
                })?;
                let mut hasher = Sha256::new();
                let (mut loss_sum, mut finite, mut rate_sum) = (0.0, 0usize, 0.0);
                for r in &results {
                    hash_noise(&mut hasher, &r.noise);
                    if r.loss.is_finite() {
                        loss_sum += r.loss;
                        finite += 1;
                    }
                    rate_sum += r.rate;
                }
                let predictions: Vec<(usize, usize)> = results.iter().map(|r| r.beam).collect();
                report.rows.push(EvalRow {
                    snr_db: snr,
                    m,
                    method: method.name.clone(),
                    alignment_prob: alignment_probability(&predictions, &labels)?,
                    bf_loss_db: if finite > 0 { loss_sum / finite as f64 } else { f64::INFINITY },
                    rate: rate_sum / samples.len() as f64,
                    infinite_loss: samples.len() - finite,
                    noise_hash: hex::encode(hasher.finalize()),
                    predictions,
                });
            }
        }
    }
    Ok(report)
}

/// `%g`-style rendering with six significant digits.
pub fn format_g(v: f64) -> String {
    crate::io::format_sig(v, 6)
}

pub const CSV_HEADER: &str = "snr_db,m,method,alignment_prob,bf_loss_db,rate";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                format_g(r.snr_db),
                r.m,
                r.method,
                format_g(r.alignment_prob),
                format_g(r.bf_loss_db),
                format_g(r.rate)
            );
        }
        out
    }

    pub fn row(&self, snr_db: f64, m: usize, method: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.m == m && r.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{idft2, ComplexMatrix};

    fn sample_from_beamspace(x: ComplexMatrix) -> ChannelSample {
        ChannelSample::narrowband(idft2(&x).unwrap(), true).unwrap()
    }

    #[test]
    fn snr_and_rate_examples() {
        let n = 4;
        let ones = ChannelSample::narrowband(ComplexMatrix::filled(n, n, Complex64::new(1.0, 0.0)), true).unwrap();
        assert!((snr_bf(&ones, (0, 0), 1.0).unwrap() - 16.0).abs() < 1e-12);
        assert!(snr_bf(&ones, (1, 2), 1.0).unwrap() < 1e-24);
        assert!(snr_bf(&ones, (0, 0), 0.0).is_err());

        let mut x = ComplexMatrix::zeros(n, n);
        x[(0, 0)] = Complex64::new(1.0, 0.0);
        let s = sample_from_beamspace(x);
        assert!((rate(&s, (0, 0), 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let mut x = ComplexMatrix::zeros(4, 4);
        x[(1, 1)] = Complex64::new(2f64.sqrt(), 0.0);
        x[(2, 3)] = Complex64::new(0.0, 1.0);
        let s = sample_from_beamspace(x);
        assert_eq!(beamforming_loss(&s, (1, 1)).unwrap(), 0.0);
        assert!((beamforming_loss(&s, (2, 3)).unwrap() - 10.0 * 2f64.log10()).abs() < 1e-9);
        assert!(beamforming_loss(&s, (0, 0)).unwrap() > 100.0 || beamforming_loss(&s, (0, 0)).unwrap().is_infinite());
    }

    #[test]
    fn alignment_examples() {
        let l = [(0, 0), (1, 1), (2, 2), (3, 3)];
        assert_eq!(alignment_probability(&l, &l).unwrap(), 1.0);
        assert_eq!(alignment_probability(&[(0, 0), (1, 2), (2, 2), (3, 3)], &l).unwrap(), 0.75);
        assert_eq!(alignment_probability(&[(1, 0); 4], &l).unwrap(), 0.0);
        assert!(alignment_probability(&[], &[]).is_err());
    }

    #[test]
    fn format_g_matches_printf() {
        for (v, s) in [
            (0.0, "0"),
            (1.0, "1"),
            (0.75, "0.75"),
            (-10.0, "-10"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (3.0102999566, "3.0103"),
            (999999.5, "1e+06"),
            (f64::INFINITY, "inf"),
        ] {
            assert_eq!(format_g(v), s, "{v}");
        }
    }

    #[test]
    fn parallel_map_keeps_order() {
        let out = parallel_map(11, 3, |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..11).map(|i| i * i).collect::<Vec<_>>());
    }
}
