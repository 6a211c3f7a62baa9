//! Vehicular MISO channels for an `N x N` half-wavelength UPA.
//!
//! Channels come from a geometric two-lane street: a roadside unit on a pole
//! serves vehicles dropped uniformly along two lanes. The LOS path follows
//! the exact RSU-to-vehicle geometry with free-space gain; specular wall
//! reflections are found with the image method. A blocked vehicle keeps only
//! its reflected paths.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dft2, ComplexMatrix};
use crate::rng;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Linear amplitude.
    pub gain: f64,
    /// Radians.
    pub phase: f64,
    /// Angle from the array's vertical axis, radians.
    pub elevation: f64,
    /// Radians, measured from the street axis.
    pub azimuth: f64,
    /// Seconds.
    pub delay: f64,
}

impl Path {
    /// Row and column spatial frequencies `(cos theta, sin theta cos phi)`.
    pub fn spatial_frequencies(&self) -> (f64, f64) {
        (
            self.elevation.cos(),
            self.elevation.sin() * self.azimuth.cos(),
        )
    }

    fn rank_one(&self, n: usize) -> ComplexMatrix {
        let (dr, dc) = self.spatial_frequencies();
        let a = array_response(n, dr);
        let b = array_response(n, dc);
        let g = Complex64::from_polar(self.gain, self.phase);
        ComplexMatrix::from_fn(n, n, |k, l| g * a[k] * b[l])
    }
}

/// Non-empty list of paths sorted by delay.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(mut paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("a path set needs at least one path"));
        }
        for p in &paths {
            if !(p.gain >= 0.0) || !(p.delay >= 0.0) {
                return Err(Error::invalid(format!(
                    "path gain and delay must be non-negative, got gain {} delay {}",
                    p.gain, p.delay
                )));
            }
        }
        paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Vandermonde steering vector `[1, e^{j pi D}, ..., e^{j (N-1) pi D}]`.
pub fn array_response(n: usize, spatial_freq: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, PI * spatial_freq * k as f64))
        .collect()
}

/// Narrowband channel `sum_l alpha_l e^{j beta_l} a(cos theta_l) a(sin theta_l cos phi_l)^T`.
pub fn narrowband_channel(paths: &PathSet, n: usize) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(n, n);
    for p in paths.paths() {
        let term = p.rank_one(n);
        for (acc, t) in h.as_mut_slice().iter_mut().zip(term.as_slice()) {
            *acc += t;
        }
    }
    h
}

/// Beamspace `X = U^* H U^*`.
pub fn beamspace(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    dft2(h)
}

fn argmax_row_major(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        // strict comparison keeps the smallest index on ties
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Index `(i, j)` of the strongest 2D-DFT beam.
pub fn best_beam_label(h: &ComplexMatrix) -> Result<(usize, usize)> {
    let x = beamspace(h)?;
    let n = x.rows();
    let (idx, v) = argmax_row_major(x.as_slice().iter().map(|z| z.norm_sqr()))
        .ok_or_else(|| Error::invalid("empty channel"))?;
    if v == 0.0 {
        return Err(Error::invalid("all-zero channel has no best beam"));
    }
    Ok((idx / n, idx % n))
}

/// Strongest beam of a subcarrier stack by total beamspace power.
pub fn best_beam_label_wideband(subcarriers: &[ComplexMatrix]) -> Result<(usize, usize)> {
    let first = subcarriers
        .first()
        .ok_or_else(|| Error::invalid("empty subcarrier stack"))?;
    if subcarriers.len() == 1 {
        return best_beam_label(first);
    }
    let n = first.side()?;
    let mut power = vec![0.0; n * n];
    for h in subcarriers {
        let x = beamspace(h)?;
        for (acc, z) in power.iter_mut().zip(x.as_slice()) {
            *acc += z.norm_sqr();
        }
    }
    let (idx, v) = argmax_row_major(power.into_iter()).expect("non-empty");
    if v == 0.0 {
        return Err(Error::invalid("all-zero channel has no best beam"));
    }
    Ok((idx / n, idx % n))
}

/// Geometry and radio parameters of the synthetic street.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Metres above ground.
    pub rsu_height: f64,
    /// Receiver (vehicle roof) height, metres.
    pub rx_height: f64,
    /// Lateral lane distances from the RSU foot, metres.
    pub lane_offsets: Vec<f64>,
    pub street_length: f64,
    pub blockage_probability: f64,
    /// 0 disables reflections.
    pub max_reflections: usize,
    /// Far building facade, metres across the street from the RSU.
    pub wall_distance: f64,
    /// Building facade behind the RSU, metres.
    pub wall_setback: f64,
    /// Amplitude loss per bounce, dB.
    pub reflection_loss_db: f64,
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 16,
            rsu_height: 5.0,
            rx_height: 1.5,
            lane_offsets: vec![4.0, 7.0],
            street_length: 100.0,
            blockage_probability: 0.27,
            max_reflections: 1,
            wall_distance: 10.0,
            wall_setback: 3.0,
            reflection_loss_db: 10.0,
            carrier_frequency: 28e9,
            bandwidth: 100e6,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return fail("array side must be positive".into());
        }
        if self.lane_offsets.is_empty() {
            return fail("at least one lane is required".into());
        }
        for (i, &a) in self.lane_offsets.iter().enumerate() {
            if !(a > 0.0) {
                return fail(format!("lane offset {a} must be positive"));
            }
            if self.lane_offsets[..i].contains(&a) {
                return fail(format!("lane offset {a} repeated"));
            }
            if a >= self.wall_distance {
                return fail(format!("lane offset {a} lies beyond the far wall"));
            }
        }
        if !(0.0..=1.0).contains(&self.blockage_probability) {
            return fail(format!(
                "blockage probability {} outside [0, 1]",
                self.blockage_probability
            ));
        }
        if !(self.wall_setback > 0.0) || !(self.street_length > 0.0) {
            return fail("wall setback and street length must be positive".into());
        }
        if self.max_reflections > 2 {
            return fail("at most two wall bounces are modelled".into());
        }
        if !(self.carrier_frequency > 0.0) || !(self.bandwidth > 0.0) {
            return fail("carrier frequency and bandwidth must be positive".into());
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Path towards a (possibly mirrored) receiver position.
    fn path_to(&self, dx: f64, dy: f64, amplitude_scale: f64) -> Path {
        let dz = self.rx_height - self.rsu_height;
        let dist = (dx * dx + dy * dy + dz * dz).sqrt();
        let lambda = self.wavelength();
        let gain = amplitude_scale * lambda / (4.0 * PI * dist);
        let phase = (-2.0 * PI * dist / lambda).rem_euclid(2.0 * PI);
        Path {
            gain,
            phase,
            elevation: (dz / dist).clamp(-1.0, 1.0).acos(),
            azimuth: dy.atan2(dx),
            delay: dist / SPEED_OF_LIGHT,
        }
    }

    /// Paths to a receiver at street coordinate `x` on a lane at lateral `y`.
    pub fn paths_for(&self, x: f64, y: f64, blocked: bool) -> Result<PathSet> {
        let mut paths = Vec::new();
        if !blocked {
            paths.push(self.path_to(x, y, 1.0));
        }
        let far = self.wall_distance;
        let near = -self.wall_setback;
        let loss = 10f64.powf(-self.reflection_loss_db / 20.0);
        if self.max_reflections >= 1 {
            paths.push(self.path_to(x, 2.0 * far - y, loss));
            paths.push(self.path_to(x, 2.0 * near - y, loss));
        }
        if self.max_reflections >= 2 {
            // far then near wall, and near then far
            paths.push(self.path_to(x, 2.0 * near - (2.0 * far - y), loss * loss));
            paths.push(self.path_to(x, 2.0 * far - (2.0 * near - y), loss * loss));
        }
        if paths.is_empty() {
            // blocked with reflections disabled: keep a residual diffracted LOS
            paths.push(self.path_to(x, y, loss * loss));
        }
        PathSet::new(paths)
    }
}

/// One geometric drop of the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Drop {
    pub paths: PathSet,
    pub los: bool,
    pub lane: usize,
    pub position: f64,
}

/// Draws the path sets of `count` vehicles. Each drop depends only on
/// `(config.seed, index)`.
pub fn gen_drops(config: &ScenarioConfig, count: usize) -> Result<Vec<Drop>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    (0..count)
        .map(|i| {
            let mut r = rng::stream(config.seed, &[rng::salt::SCENARIO, i as u64]);
            let lane = r.random_range(0..config.lane_offsets.len());
            let position = (r.random::<f64>() - 0.5) * config.street_length;
            let blocked = r.random::<f64>() < config.blockage_probability;
            let paths = config.paths_for(position, config.lane_offsets[lane], blocked)?;
            Ok(Drop {
                paths,
                los: !blocked,
                lane,
                position,
            })
        })
        .collect()
}

/// Channel realisation: one narrowband matrix or a stack of subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelData {
    Narrowband(ComplexMatrix),
    Wideband(Vec<ComplexMatrix>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub data: ChannelData,
    pub label: (usize, usize),
    pub los: bool,
}

impl ChannelSample {
    pub fn narrowband(h: ComplexMatrix, los: bool) -> Result<Self> {
        let label = best_beam_label(&h)?;
        Ok(Self {
            data: ChannelData::Narrowband(h),
            label,
            los,
        })
    }

    pub fn wideband(subcarriers: Vec<ComplexMatrix>, los: bool) -> Result<Self> {
        let label = best_beam_label_wideband(&subcarriers)?;
        Ok(Self {
            data: ChannelData::Wideband(subcarriers),
            label,
            los,
        })
    }

    /// The per-subcarrier matrices; a narrowband sample is a stack of one.
    pub fn matrices(&self) -> &[ComplexMatrix] {
        match &self.data {
            ChannelData::Narrowband(h) => std::slice::from_ref(h),
            ChannelData::Wideband(v) => v,
        }
    }

    pub fn matrices_mut(&mut self) -> &mut [ComplexMatrix] {
        match &mut self.data {
            ChannelData::Narrowband(h) => std::slice::from_mut(h),
            ChannelData::Wideband(v) => v,
        }
    }

    pub fn side(&self) -> usize {
        self.matrices()[0].rows()
    }

    /// Row-major class index `i N + j`.
    pub fn class(&self) -> usize {
        self.label.0 * self.side() + self.label.1
    }

    /// Mean Frobenius power over subcarriers (`||H||_F^2` for narrowband).
    pub fn power(&self) -> f64 {
        let m = self.matrices();
        m.iter().map(ComplexMatrix::frobenius_norm_sqr).sum::<f64>() / m.len() as f64
    }

    /// Multiplies every matrix by `alpha`; the label is unchanged.
    pub fn scale(&mut self, alpha: f64) {
        for h in self.matrices_mut() {
            h.scale_in_place(alpha);
        }
    }
}

/// Narrowband samples of the street scenario.
pub fn gen_scenario(config: &ScenarioConfig, count: usize) -> Result<Vec<ChannelSample>> {
    gen_drops(config, count)?
        .into_iter()
        .map(|d| ChannelSample::narrowband(narrowband_channel(&d.paths, config.n), d.los))
        .collect()
}

/// Pulse shape `g(t)` of the wideband tap model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pulse {
    /// `sinc(t / T)`.
    Sinc,
    RaisedCosine { rolloff: f64 },
}

impl Pulse {
    /// Value at `t / T`.
    pub fn eval(&self, t: f64) -> f64 {
        let sinc = |x: f64| {
            if x.abs() < 1e-12 {
                1.0
            } else {
                (PI * x).sin() / (PI * x)
            }
        };
        match *self {
            Pulse::Sinc => sinc(t),
            Pulse::RaisedCosine { rolloff } => {
                if rolloff == 0.0 {
                    return sinc(t);
                }
                let d = 1.0 - (2.0 * rolloff * t).powi(2);
                if d.abs() < 1e-10 {
                    PI / 4.0 * sinc(1.0 / (2.0 * rolloff))
                } else {
                    sinc(t) * (PI * rolloff * t).cos() / d
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidebandConfig {
    /// Tap count `L_c`.
    pub taps: usize,
    /// Sampling period `T`, seconds.
    pub sample_period: f64,
    /// Subcarrier stride `L_sub`.
    pub stride: usize,
    pub pulse: Pulse,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
}

impl WidebandConfig {
    /// Defaults for an `n x n` array at the given bandwidth.
    pub fn for_array(n: usize, bandwidth: f64) -> Self {
        Self {
            taps: 128,
            sample_period: 1.0 / bandwidth,
            stride: 8,
            pulse: Pulse::RaisedCosine { rolloff: 0.35 },
            tx_antennas: n * n,
            rx_antennas: 1,
        }
    }

    /// Number of retained subcarriers `L_c / L_sub`.
    pub fn subcarrier_count(&self) -> Result<usize> {
        if self.stride == 0 || self.taps == 0 || self.taps % self.stride != 0 {
            return Err(Error::Config(format!(
                "tap count {} is not divisible by subcarrier stride {}",
                self.taps, self.stride
            )));
        }
        Ok(self.taps / self.stride)
    }

    /// Retained DFT indices `s L_sub + 1`; DC is never among them.
    pub fn subcarrier_indices(&self) -> Result<Vec<usize>> {
        let count = self.subcarrier_count()?;
        Ok((0..count).map(|s| s * self.stride + 1).collect())
    }
}

/// Delay-domain taps `H[n] = sqrt(Nt Nr) sum_l g(nT - tau_l) alpha_l e^{j beta_l} a a^T`.
pub fn wideband_taps(paths: &PathSet, cfg: &WidebandConfig, n: usize) -> Result<Vec<ComplexMatrix>> {
    if cfg.taps == 0 || !(cfg.sample_period > 0.0) {
        return Err(Error::Config("tap count and sampling period must be positive".into()));
    }
    let array_gain = ((cfg.tx_antennas * cfg.rx_antennas) as f64).sqrt();
    let terms: Vec<ComplexMatrix> = paths.paths().iter().map(|p| p.rank_one(n)).collect();
    Ok((0..cfg.taps)
        .map(|tap| {
            let mut h = ComplexMatrix::zeros(n, n);
            for (p, term) in paths.paths().iter().zip(&terms) {
                let g = cfg
                    .pulse
                    .eval(tap as f64 - p.delay / cfg.sample_period);
                if g == 0.0 {
                    continue;
                }
                let w = array_gain * g;
                for (acc, t) in h.as_mut_slice().iter_mut().zip(term.as_slice()) {
                    *acc += t * w;
                }
            }
            h
        })
        .collect())
}

/// Unnormalised frequency response across taps at DFT index `k`.
pub fn frequency_response(taps: &[ComplexMatrix], k: usize) -> ComplexMatrix {
    let len = taps.len();
    let n = taps[0].rows();
    let mut out = ComplexMatrix::zeros(n, n);
    for (t, h) in taps.iter().enumerate() {
        let w = Complex64::from_polar(1.0, -2.0 * PI * ((k * t) % len) as f64 / len as f64);
        for (acc, v) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *acc += v * w;
        }
    }
    out
}

/// Subcarriers `{H^[s L_sub + 1] : s = 0 .. N_sc - 1}`.
pub fn subcarriers(taps: &[ComplexMatrix], cfg: &WidebandConfig) -> Result<Vec<ComplexMatrix>> {
    let indices = cfg.subcarrier_indices()?;
    if taps.len() != cfg.taps {
        return Err(Error::dim(format!(
            "expected {} taps, got {}",
            cfg.taps,
            taps.len()
        )));
    }
    Ok(indices
        .into_iter()
        .map(|k| frequency_response(taps, k % cfg.taps))
        .collect())
}

/// Wideband samples of the street scenario.
pub fn gen_wideband(
    config: &ScenarioConfig,
    wcfg: &WidebandConfig,
    count: usize,
) -> Result<Vec<ChannelSample>> {
    gen_drops(config, count)?
        .into_iter()
        .map(|d| {
            let taps = wideband_taps(&d.paths, wcfg, config.n)?;
            ChannelSample::wideband(subcarriers(&taps, wcfg)?, d.los)
        })
        .collect()
}

/// Scales every sample to power `N^2` (`||H||_F = N` for narrowband).
pub fn normalize_stage1(samples: &mut [ChannelSample]) -> Result<()> {
    for (i, s) in samples.iter_mut().enumerate() {
        let n = s.side() as f64;
        let p = s.power();
        if !(p > 0.0) {
            return Err(Error::invalid(format!("sample {i} has zero power")));
        }
        s.scale(n / p.sqrt());
    }
    Ok(())
}

/// Applies one common scalar so the mean power equals `N^2`; returns it.
pub fn normalize_eval(samples: &mut [ChannelSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot normalise an empty dataset"));
    }
    let n = samples[0].side() as f64;
    let mean = samples.iter().map(ChannelSample::power).sum::<f64>() / samples.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::invalid("dataset has zero mean power"));
    }
    let alpha = n / mean.sqrt();
    for s in samples.iter_mut() {
        s.scale(alpha);
    }
    Ok(alpha)
}

/// Empirical probability of each beam being the best one.
pub fn beamspace_prior(samples: &[ChannelSample]) -> Result<Array2<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("empty dataset has no prior"))?;
    let n = first.side();
    let mut prior = Array2::<f64>::zeros((n, n));
    for s in samples {
        prior[[s.label.0, s.label.1]] += 1.0;
    }
    prior /= samples.len() as f64;
    Ok(prior)
}

/// Cells whose prior probability exceeds `1 / (10 N^2)`.
pub fn prior_support(prior: &Array2<f64>) -> Vec<(usize, usize)> {
    let n = prior.nrows();
    let threshold = 1.0 / (10.0 * (n * n) as f64);
    prior
        .indexed_iter()
        .filter(|(_, &v)| v > threshold)
        .map(|(idx, _)| idx)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_matrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single(gain: f64, phase: f64, elevation: f64, azimuth: f64, delay: f64) -> Path {
        Path { gain, phase, elevation, azimuth, delay }
    }

    #[test]
    fn steering_vectors() {
        assert_eq!(array_response(2, 0.0), vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let a = array_response(2, 1.0);
        assert!((a[1] - c(-1.0, 0.0)).norm() < 1e-15);
        let a = array_response(4, 0.5);
        for (k, z) in a.iter().enumerate() {
            let expect = c((PI * 0.5 * k as f64).cos(), (PI * 0.5 * k as f64).sin());
            assert!((z - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn broadside_single_path() {
        let ps = PathSet::new(vec![single(1.0, 0.0, PI / 2.0, 0.0, 0.0)]).unwrap();
        let h = narrowband_channel(&ps, 2);
        let expect = [c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)];
        for (z, e) in h.as_slice().iter().zip(expect) {
            assert!((z - e).norm() < 1e-12);
        }
        let ps2 = PathSet::new(vec![single(2.0, 0.0, PI / 2.0, 0.0, 0.0)]).unwrap();
        assert!(narrowband_channel(&ps2, 2).rel_error(&h.scale(2.0)) < 1e-15);
    }

    #[test]
    fn channel_is_linear_in_paths() {
        let p1 = single(0.7, 1.1, 1.2, 0.4, 1e-8);
        let p2 = single(0.3, -0.4, 2.0, 2.5, 3e-8);
        let a = narrowband_channel(&PathSet::new(vec![p1]).unwrap(), 8);
        let b = narrowband_channel(&PathSet::new(vec![p2]).unwrap(), 8);
        let ab = narrowband_channel(&PathSet::new(vec![p2, p1]).unwrap(), 8);
        assert!(ab.sub(&a.add(&b).unwrap()).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn path_set_validation() {
        assert!(PathSet::new(vec![]).is_err());
        assert!(PathSet::new(vec![single(-1.0, 0.0, 0.0, 0.0, 0.0)]).is_err());
        let ps = PathSet::new(vec![single(1.0, 0.0, 0.0, 0.0, 2.0), single(1.0, 0.0, 0.0, 0.0, 1.0)]).unwrap();
        assert!(ps.paths()[0].delay <= ps.paths()[1].delay);
    }

    #[test]
    fn beamspace_support() {
        let n = 8;
        let x = beamspace(&ComplexMatrix::filled(n, n, c(1.0, 0.0))).unwrap();
        assert!((x[(0, 0)].norm() - n as f64).abs() < 1e-12);

        // on-grid path at D_row = -2p/N, D_col = -2q/N
        let (p, q) = (3usize, 5usize);
        let a = array_response(n, -2.0 * p as f64 / n as f64);
        let b = array_response(n, -2.0 * q as f64 / n as f64);
        let h = ComplexMatrix::from_fn(n, n, |k, l| a[k] * b[l]);
        let x = beamspace(&h).unwrap();
        let support: Vec<_> = (0..n * n).filter(|&i| x.as_slice()[i].norm() > 1e-9).collect();
        assert_eq!(support, vec![p * n + q]);
        assert_eq!(best_beam_label(&h).unwrap(), (p, q));

        // slightly off grid: leakage, argmax at the nearest grid point
        let a = array_response(n, -2.0 * (p as f64 + 0.2) / n as f64);
        let b = array_response(n, -2.0 * (q as f64 - 0.3) / n as f64);
        let h = ComplexMatrix::from_fn(n, n, |k, l| a[k] * b[l]);
        let x = beamspace(&h).unwrap();
        let nonzero = x.as_slice().iter().filter(|z| z.norm() > 1e-9).count();
        assert!(nonzero > 1);
        assert_eq!(best_beam_label(&h).unwrap(), (p, q));
    }

    #[test]
    fn labels() {
        assert_eq!(best_beam_label(&ComplexMatrix::filled(4, 4, c(1.0, 0.0))).unwrap(), (0, 0));
        assert!(best_beam_label(&ComplexMatrix::zeros(4, 4)).is_err());
        for seed in 0..20 {
            let h = random_matrix(6, seed);
            let label = best_beam_label(&h).unwrap();
            assert_eq!(best_beam_label(&h.scale(3.7)).unwrap(), label);
            let x = dft2(&h).unwrap();
            let mut best = (0, 0);
            for i in 0..6 {
                for j in 0..6 {
                    if x[(i, j)].norm() > x[best].norm() {
                        best = (i, j);
                    }
                }
            }
            assert_eq!(label, best);
        }
    }

    #[test]
    fn ties_resolve_to_smallest_index() {
        // two equal-power on-grid beams
        let n = 4;
        let x = {
            let mut x = ComplexMatrix::zeros(n, n);
            x[(2, 1)] = c(1.0, 0.0);
            x[(1, 3)] = c(0.0, 1.0);
            x
        };
        let h = crate::linalg::idft2(&x).unwrap();
        assert_eq!(best_beam_label(&h).unwrap(), (1, 3));
    }

    #[test]
    fn blockage_extremes() {
        let mut cfg = ScenarioConfig { blockage_probability: 0.0, seed: 3, ..Default::default() };
        let s = gen_scenario(&cfg, 1000).unwrap();
        assert!(s.iter().all(|x| x.los));
        cfg.blockage_probability = 1.0;
        let s = gen_scenario(&cfg, 200).unwrap();
        assert!(s.iter().all(|x| !x.los));
        assert!(gen_scenario(&cfg, 0).is_err());
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = ScenarioConfig { seed: 99, ..Default::default() };
        assert_eq!(gen_scenario(&cfg, 50).unwrap(), gen_scenario(&cfg, 50).unwrap());
        let other = ScenarioConfig { seed: 100, ..Default::default() };
        assert_ne!(gen_scenario(&cfg, 50).unwrap(), gen_scenario(&other, 50).unwrap());
    }

    #[test]
    fn config_validation() {
        let bad = ScenarioConfig { lane_offsets: vec![4.0, 4.0], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { blockage_probability: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { lane_offsets: vec![-1.0], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn nlos_is_much_weaker_than_los() {
        let cfg = ScenarioConfig { seed: 5, ..Default::default() };
        let s = gen_scenario(&cfg, 3000).unwrap();
        let mean = |los: bool| {
            let v: Vec<f64> = s.iter().filter(|x| x.los == los).map(|x| x.power()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let gap_db = 10.0 * (mean(true) / mean(false)).log10();
        assert!(gap_db >= 8.0, "LOS/NLOS gap {gap_db} dB");
    }

    #[test]
    fn prior_concentrates_on_few_beams() {
        let cfg = ScenarioConfig { seed: 1, ..Default::default() };
        let s = gen_scenario(&cfg, 5000).unwrap();
        let prior = beamspace_prior(&s).unwrap();
        assert!((prior.sum() - 1.0).abs() < 1e-12);
        let support = prior_support(&prior);
        assert!(support.len() * 4 < 256, "support covers {} cells", support.len());
    }

    #[test]
    fn prior_histogram() {
        let h = ComplexMatrix::filled(4, 4, c(1.0, 0.0));
        let a = ChannelSample::narrowband(h.clone(), true).unwrap();
        let prior = beamspace_prior(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(prior[[0, 0]], 1.0);
        assert_eq!(prior.sum(), 1.0);

        let b = ChannelSample::narrowband(ComplexMatrix::unit(4, 0, 0), true).unwrap();
        let mut b2 = b.clone();
        b2.label = (1, 2);
        let prior = beamspace_prior(&[b, b2]).unwrap();
        assert_eq!(prior[[0, 0]], 0.5);
        assert_eq!(prior[[1, 2]], 0.5);
        assert!(beamspace_prior(&[]).is_err());
    }

    #[test]
    fn stage1_normalisation() {
        let n = 4;
        let mut s = vec![
            ChannelSample::narrowband(random_matrix(n, 1), true).unwrap(),
            ChannelSample::narrowband(random_matrix(n, 2).scale(40.0), false).unwrap(),
        ];
        let labels: Vec<_> = s.iter().map(|x| x.label).collect();
        normalize_stage1(&mut s).unwrap();
        for (x, l) in s.iter().zip(labels) {
            assert!((x.matrices()[0].frobenius_norm() - n as f64).abs() < 1e-12);
            assert_eq!(x.label, l);
        }
        // already normalised stays put; 2N halves
        let h = random_matrix(n, 3);
        let h = h.scale(2.0 * n as f64 / h.frobenius_norm());
        let mut one = vec![ChannelSample::narrowband(h.clone(), true).unwrap()];
        normalize_stage1(&mut one).unwrap();
        assert!(one[0].matrices()[0].rel_error(&h.scale(0.5)) < 1e-14);
        normalize_stage1(&mut one).unwrap();
        assert!(one[0].matrices()[0].rel_error(&h.scale(0.5)) < 1e-14);

        let mut zero = vec![ChannelSample {
            data: ChannelData::Narrowband(ComplexMatrix::zeros(n, n)),
            label: (0, 0),
            los: true,
        }];
        assert!(normalize_stage1(&mut zero).is_err());
    }

    #[test]
    fn eval_normalisation_uses_one_scalar() {
        let n = 4;
        let h = random_matrix(n, 8);
        let h = h.scale(2.0 * n as f64 / h.frobenius_norm());
        let mut s = vec![ChannelSample::narrowband(h.clone(), true).unwrap(); 3];
        let alpha = normalize_eval(&mut s).unwrap();
        assert!((alpha - 0.5).abs() < 1e-14);
        let alpha = normalize_eval(&mut s).unwrap();
        assert!((alpha - 1.0).abs() < 1e-14);
        assert!(normalize_eval(&mut []).is_err());

        let cfg = ScenarioConfig { seed: 12, ..Default::default() };
        let mut s = gen_scenario(&cfg, 400).unwrap();
        let before: Vec<f64> = s.iter().map(ChannelSample::power).collect();
        normalize_eval(&mut s).unwrap();
        let after: Vec<f64> = s.iter().map(ChannelSample::power).collect();
        let mean = after.iter().sum::<f64>() / after.len() as f64;
        assert!((mean / (cfg.n * cfg.n) as f64 - 1.0).abs() < 1e-9);
        let ratio = before[0] / after[0];
        for (b, a) in before.iter().zip(&after) {
            assert!((b / a / ratio - 1.0).abs() < 1e-12);
        }
    }

    fn one_path_cfg(taps: usize, stride: usize) -> WidebandConfig {
        WidebandConfig {
            taps,
            sample_period: 1e-8,
            stride,
            pulse: Pulse::RaisedCosine { rolloff: 0.35 },
            tx_antennas: 16,
            rx_antennas: 1,
        }
    }

    #[test]
    fn taps_of_single_zero_delay_path() {
        let n = 4;
        let cfg = one_path_cfg(16, 2);
        let ps = PathSet::new(vec![single(0.8, 0.3, 1.0, 0.5, 0.0)]).unwrap();
        let taps = wideband_taps(&ps, &cfg, n).unwrap();
        assert_eq!(taps.len(), 16);
        let nb = narrowband_channel(&ps, n).scale(4.0);
        assert!(taps[0].rel_error(&nb) < 1e-12);
        for t in &taps[1..] {
            assert!(t.max_abs() < 1e-12);
        }
        let silent = PathSet::new(vec![single(0.0, 0.3, 1.0, 0.5, 0.0)]).unwrap();
        assert!(wideband_taps(&silent, &cfg, n).unwrap().iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn delayed_path_lands_on_its_tap() {
        let n = 4;
        let cfg = one_path_cfg(16, 2);
        let p1 = single(1.0, 0.0, 1.0, 0.5, 0.0);
        let p2 = single(0.5, 1.0, 2.0, 1.5, 3.0 * cfg.sample_period);
        let taps = wideband_taps(&PathSet::new(vec![p1, p2]).unwrap(), &cfg, n).unwrap();
        let second = narrowband_channel(&PathSet::new(vec![p2]).unwrap(), n).scale(4.0);
        assert!(taps[3].rel_error(&second) < 1e-12);
    }

    #[test]
    fn subcarrier_extraction() {
        let n = 3;
        let cfg = one_path_cfg(8, 2);
        assert_eq!(cfg.subcarrier_indices().unwrap(), vec![1, 3, 5, 7]);

        let mut flat = vec![ComplexMatrix::zeros(n, n); 8];
        flat[0] = random_matrix(n, 4);
        for s in subcarriers(&flat, &cfg).unwrap() {
            assert!(s.rel_error(&flat[0]) < 1e-14);
        }
        let zeros = vec![ComplexMatrix::zeros(n, n); 8];
        assert!(subcarriers(&zeros, &cfg).unwrap().iter().all(|s| s.max_abs() == 0.0));

        let mut two = vec![ComplexMatrix::zeros(n, n); 8];
        two[0] = random_matrix(n, 5);
        two[1] = random_matrix(n, 6);
        let sc = subcarriers(&two, &cfg).unwrap();
        for (s, k) in sc.iter().zip([1usize, 3, 5, 7]) {
            let w = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / 8.0);
            let expect = two[0].add(&two[1].map(|z| z * w)).unwrap();
            assert!(s.rel_error(&expect) < 1e-13);
        }
        let bad = one_path_cfg(8, 3);
        assert!(subcarriers(&two, &bad).is_err());
    }

    #[test]
    fn full_grid_response_inverts_to_taps() {
        let n = 3;
        let cfg = one_path_cfg(8, 1);
        let taps: Vec<_> = (0..8).map(|s| random_matrix(n, 50 + s)).collect();
        let resp = subcarriers(&taps, &cfg).unwrap();
        // indices are 1..=8, with 8 = 0 mod 8
        for (t, tap) in taps.iter().enumerate() {
            let mut acc = ComplexMatrix::zeros(n, n);
            for (i, r) in resp.iter().enumerate() {
                let k = (i + 1) % 8;
                let w = Complex64::from_polar(1.0 / 8.0, 2.0 * PI * ((k * t) % 8) as f64 / 8.0);
                acc = acc.add(&r.map(|z| z * w)).unwrap();
            }
            assert!(acc.rel_error(tap) < 1e-10);
        }
    }

    #[test]
    fn raised_cosine_is_nyquist() {
        let p = Pulse::RaisedCosine { rolloff: 0.35 };
        assert_eq!(p.eval(0.0), 1.0);
        for k in 1..10 {
            assert!(p.eval(k as f64).abs() < 1e-12);
            assert!(p.eval(-(k as f64)).abs() < 1e-12);
        }
        // removable singularity at t = T / (2 beta)
        let t = 1.0 / 0.7;
        assert!((p.eval(t) - p.eval(t + 1e-7)).abs() < 1e-5);
    }
}
