//! Dataset, model and report files.
//!
//! Every file starts with a magic line and a plain-text manifest of
//! `key = value` lines closed by an empty line. Datasets and models follow
//! with a little-endian binary payload whose size the manifest records.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::channel::{ChannelData, ChannelSample};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::network::{ModelParams, Stage};
use crate::sensing::{Resolution, SubsamplingSet};

pub const DATASET_MAGIC: &str = "convcs-dataset 1";
pub const MODEL_MAGIC: &str = "convcs-model 1";
pub const REPORT_MAGIC: &str = "convcs-report 1";

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string();
        assert!(!key.contains('=') && !key.contains('\n') && !value.contains('\n'));
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Copies every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &Manifest) -> &mut Self {
        for (k, v) in &other.entries {
            self.set(format!("{prefix}{k}"), v);
        }
        self
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| format_error(path, format!("manifest lacks `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self.require(key, path)?;
        v.parse()
            .map_err(|_| format_error(path, format!("manifest value `{key} = {v}` is malformed")))
    }
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Splits `magic \n manifest \n\n payload`.
fn split_header<'a>(bytes: &'a [u8], magic: &str, path: &Path) -> Result<(Manifest, &'a [u8])> {
    let head = format!("{magic}\n");
    if !bytes.starts_with(head.as_bytes()) {
        return Err(format_error(path, format!("missing `{magic}` header")));
    }
    let rest = &bytes[head.len()..];
    let end = rest
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| format_error(path, "manifest is not terminated by an empty line"))?;
    let text = std::str::from_utf8(&rest[..end + 1])
        .map_err(|_| format_error(path, "manifest is not UTF-8"))?;
    let manifest = Manifest::from_text(text).map_err(|e| format_error(path, e))?;
    Ok((manifest, &rest[end + 2..]))
}

fn join_header(magic: &str, manifest: &Manifest, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{}\n", manifest.to_text()).into_bytes();
    out.extend_from_slice(payload);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_error(self.path, "payload is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_error(
                self.path,
                format!("{} trailing payload bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Dataset with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ChannelSample>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn side(&self) -> usize {
        self.samples.first().map_or(0, ChannelSample::side)
    }

    pub fn is_wideband(&self) -> bool {
        matches!(self.samples.first().map(|s| &s.data), Some(ChannelData::Wideband(_)))
    }
}

/// Serialises samples. `extra` is appended after the structural keys.
pub fn encode_dataset(samples: &[ChannelSample], extra: &Manifest) -> Result<Vec<u8>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("cannot write an empty dataset"))?;
    let n = first.side();
    let wideband = matches!(first.data, ChannelData::Wideband(_));
    let n_sc = first.matrices().len();

    let mut payload = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let same_kind = matches!(s.data, ChannelData::Wideband(_)) == wideband;
        if s.side() != n || s.matrices().len() != n_sc || !same_kind {
            return Err(Error::dim(format!("sample {i} differs in shape from sample 0")));
        }
        for h in s.matrices() {
            for z in h.as_slice() {
                payload.extend_from_slice(&z.re.to_le_bytes());
                payload.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    for s in samples {
        payload.extend_from_slice(&(s.class() as u32).to_le_bytes());
    }
    for s in samples {
        payload.push(u8::from(s.los));
    }

    let mut m = Manifest::new();
    m.set("format_version", 1)
        .set("n", n)
        .set("kind", if wideband { "wideband" } else { "narrowband" })
        .set("count", samples.len())
        .set("n_sc", n_sc);
    for (k, v) in extra.entries() {
        m.set(k.clone(), v);
    }
    m.set("payload_bytes", payload.len());
    Ok(join_header(DATASET_MAGIC, &m, &payload))
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let (manifest, payload) = split_header(bytes, DATASET_MAGIC, path)?;
    let n: usize = manifest.parse("n", path)?;
    let count: usize = manifest.parse("count", path)?;
    let n_sc: usize = manifest.parse("n_sc", path)?;
    let size: usize = manifest.parse("payload_bytes", path)?;
    let wideband = match manifest.require("kind", path)? {
        "narrowband" => false,
        "wideband" => true,
        k => return Err(format_error(path, format!("unknown dataset kind `{k}`"))),
    };
    if n == 0 || count == 0 || n_sc == 0 || (!wideband && n_sc != 1) {
        return Err(format_error(path, "inconsistent shape keys"));
    }
    let expected = count * (n_sc * n * n * 16 + 5);
    if size != payload.len() || size != expected {
        return Err(format_error(
            path,
            format!("payload has {} bytes, expected {expected}", payload.len()),
        ));
    }
    let mut r = Reader { bytes: payload, pos: 0, path };
    let mut stacks = Vec::with_capacity(count);
    for _ in 0..count {
        let mut mats = Vec::with_capacity(n_sc);
        for _ in 0..n_sc {
            let data = (0..n * n)
                .map(|_| Ok(Complex64::new(r.f64()?, r.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            mats.push(ComplexMatrix::from_vec(n, n, data)?);
        }
        stacks.push(mats);
    }
    let labels = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let los = (0..count).map(|_| r.u8()).collect::<Result<Vec<_>>>()?;
    r.finish()?;

    let mut samples = Vec::with_capacity(count);
    for (i, mats) in stacks.into_iter().enumerate() {
        let flag = match los[i] {
            0 => false,
            1 => true,
            v => return Err(format_error(path, format!("sample {i} has LOS flag {v}"))),
        };
        let s = if wideband {
            ChannelSample::wideband(mats, flag)?
        } else {
            ChannelSample::narrowband(mats.into_iter().next().expect("one matrix"), flag)?
        };
        if s.class() != labels[i] as usize {
            return Err(format_error(
                path,
                format!("sample {i}: stored label {} disagrees with its channel", labels[i]),
            ));
        }
        samples.push(s);
    }
    Ok(Dataset { samples, manifest })
}

pub fn write_dataset(path: &Path, samples: &[ChannelSample], extra: &Manifest) -> Result<()> {
    fs::write(path, encode_dataset(samples, extra)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?, path)
}

/// Model with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub manifest: Manifest,
}

fn omega_inline(omega: &SubsamplingSet) -> String {
    omega
        .shifts()
        .iter()
        .map(|(r, c)| format!("{r},{c}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn encode_model(params: &ModelParams, extra: &Manifest) -> Result<Vec<u8>> {
    params.validate()?;
    let mut payload = Vec::new();
    let mut put = |v: f64| payload.extend_from_slice(&v.to_le_bytes());
    params.filter.re().into_iter().for_each(&mut put);
    params.filter.im().into_iter().for_each(&mut put);
    for w in &params.fc {
        w.iter().copied().for_each(&mut put);
    }
    if let Some(p) = &params.subcarrier_weights {
        p.iter().copied().for_each(&mut put);
    }

    let dims = params
        .dims()
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mut m = Manifest::new();
    m.set("format_version", 1)
        .set("n", params.n)
        .set("m", params.measurements())
        .set("bits", params.resolution)
        .set("stage", params.stage.as_u8())
        .set("n_sc", params.subcarriers())
        .set("wideband", params.subcarrier_weights.is_some())
        .set("fc_dims", dims)
        .set("omega_conv", format!("{:?}", params.omega_conv))
        .set("seed", params.seed)
        .set("omega", omega_inline(&params.omega));
    for (k, v) in extra.entries() {
        m.set(k.clone(), v);
    }
    m.set("payload_bytes", payload.len());
    Ok(join_header(MODEL_MAGIC, &m, &payload))
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ModelFile> {
    let (manifest, payload) = split_header(bytes, MODEL_MAGIC, path)?;
    let n: usize = manifest.parse("n", path)?;
    let m: usize = manifest.parse("m", path)?;
    let n_sc: usize = manifest.parse("n_sc", path)?;
    let wideband: bool = manifest.parse("wideband", path)?;
    let resolution: Resolution = manifest.parse("bits", path)?;
    let stage = Stage::from_u8(manifest.parse("stage", path)?)?;
    let omega_conv: f64 = manifest.parse("omega_conv", path)?;
    let seed: u64 = manifest.parse("seed", path)?;
    let size: usize = manifest.parse("payload_bytes", path)?;
    let dims = manifest
        .require("fc_dims", path)?
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| format_error(path, "malformed fc_dims"))?;
    if dims.len() < 2 {
        return Err(format_error(path, "fc_dims needs at least input and output widths"));
    }
    let omega_text = manifest.require("omega", path)?.replace(';', "\n");
    let omega = SubsamplingSet::from_text(n, &omega_text)?;
    if omega.len() != m {
        return Err(format_error(path, format!("omega has {} shifts, m = {m}", omega.len())));
    }

    let fc_count: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
    let expected = 8 * (2 * n * n + fc_count + if wideband { n_sc } else { 0 });
    if size != payload.len() || size != expected {
        return Err(format_error(
            path,
            format!("payload has {} bytes, expected {expected}", payload.len()),
        ));
    }
    let mut r = Reader { bytes: payload, pos: 0, path };
    let re = r.f64s(n * n)?;
    let im = r.f64s(n * n)?;
    let filter = ComplexMatrix::from_parts(n, n, &re, &im)?;
    let mut fc = Vec::new();
    for w in dims.windows(2) {
        let vals = r.f64s(w[0] * w[1])?;
        fc.push(ndarray::Array2::from_shape_vec((w[1], w[0]), vals).expect("sized"));
    }
    let subcarrier_weights = if wideband { Some(r.f64s(n_sc)?) } else { None };
    r.finish()?;

    let params = ModelParams {
        n,
        omega,
        filter,
        fc,
        subcarrier_weights,
        omega_conv,
        resolution,
        stage,
        seed,
    };
    params
        .validate()
        .map_err(|e| format_error(path, e.to_string()))?;
    Ok(ModelFile { params, manifest })
}

pub fn write_model(path: &Path, params: &ModelParams, extra: &Manifest) -> Result<()> {
    fs::write(path, encode_model(params, extra)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    decode_model(&fs::read(path)?, path)
}

/// Sidecar manifest path for a CSV output: `<out>.manifest`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes a CSV file and its sidecar manifest. The CSV itself stays plain
/// so downstream tools can read it directly.
pub fn write_csv(path: &Path, csv: &str, manifest: &Manifest) -> Result<()> {
    fs::write(path, csv)?;
    let mut m = manifest.clone();
    m.set("csv_sha256", sha256_hex(csv.as_bytes()));
    fs::write(sidecar_path(path), format!("{REPORT_MAGIC}\n{}", m.to_text()))?;
    Ok(())
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{v:.*e}", digits - 1);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..digits as i32).contains(&exp) {
        trim(&format!("{:.*}", (digits as i32 - 1 - exp) as usize, v))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    }
}

/// Significant digits written by [`grid_csv`].
pub const GRID_DIGITS: usize = 10;

/// `N x N` real grid as CSV, rows on lines. Values are written with
/// [`GRID_DIGITS`] significant digits and entries below `1e-12` of the
/// largest magnitude are written as 0, so grids that agree up to rounding
/// produce identical files.
pub fn grid_csv(grid: &ndarray::Array2<f64>) -> String {
    let peak = grid.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = String::new();
    for row in grid.rows() {
        let line: Vec<String> = row
            .iter()
            .map(|&v| if v.abs() <= 1e-12 * peak { "0".into() } else { format_sig(v, GRID_DIGITS) })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_grid_csv(text: &str) -> Result<ndarray::Array2<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad number `{v}`"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("ragged grid"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    ndarray::Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::invalid(e.to_string()))
}
