//! Command-line front end: dataset generation, two-stage training,
//! evaluation sweeps and grid exports.
//!
//! Every setting has a kebab-case key. Values come from the built-in
//! defaults, then an optional `key = value` config file, then command-line
//! flags. The resolved values of the keys a command uses are echoed into
//! the manifest of everything it writes, together with the SHA-256 of its
//! inputs. Output paths and thread counts are never recorded.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::baseline::OmpConfig;
use crate::channel::{
    beamspace_prior, gen_scenario, gen_wideband, normalize_eval, normalize_stage1, prior_support,
    ChannelSample, Pulse, ScenarioConfig, WidebandConfig,
};
use crate::error::Error;
use crate::eval::{sweep, Method, SweepConfig};
use crate::io::{self, Manifest};
use crate::network::{self, ModelParams, Stage, TrainConfig, DEFAULT_HIDDEN};
use crate::sensing::{mask, Resolution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::Config(_)) => EXIT_USAGE,
            CliError::Lib(Error::Singular { .. }) => EXIT_NUMERIC,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Global,
    Scenario,
    Train,
    Eval,
}

/// Every configuration key with its default and the command group using it.
pub const KEYS: &[(&str, &str, Group)] = &[
    ("seed", "0", Group::Global),
    ("threads", "1", Group::Global),
    ("n", "16", Group::Scenario),
    ("count", "1000", Group::Scenario),
    ("kind", "narrowband", Group::Scenario),
    ("n-sc", "16", Group::Scenario),
    ("taps", "128", Group::Scenario),
    ("rsu-height", "5", Group::Scenario),
    ("rx-height", "1.5", Group::Scenario),
    ("lane-offsets", "4,7", Group::Scenario),
    ("street-length", "100", Group::Scenario),
    ("blockage", "0.27", Group::Scenario),
    ("max-reflections", "1", Group::Scenario),
    ("wall-distance", "10", Group::Scenario),
    ("wall-setback", "3", Group::Scenario),
    ("reflection-loss-db", "10", Group::Scenario),
    ("carrier-frequency", "28e9", Group::Scenario),
    ("bandwidth", "100e6", Group::Scenario),
    ("rolloff", "0.35", Group::Scenario),
    ("stage", "all", Group::Train),
    ("epochs", "300", Group::Train),
    ("stage2-epochs", "100", Group::Train),
    ("batch-size", "128", Group::Train),
    ("learning-rate", "0.001", Group::Train),
    ("lr-halving-epochs", "100", Group::Train),
    ("momentum", "0.9", Group::Train),
    ("quant-interval", "10", Group::Train),
    ("bits", "inf", Group::Train),
    ("snr", "0", Group::Train),
    ("measurements", "40", Group::Train),
    ("hidden", "", Group::Train),
    ("filter-norm", "1", Group::Train),
    ("max-batches", "none", Group::Train),
    ("snr-grid", "-10:30:5", Group::Eval),
    ("m-grid", "40", Group::Eval),
    ("omp-bits", "inf", Group::Eval),
    ("omp-sparsity", "4", Group::Eval),
];

fn default_of(key: &str) -> Option<String> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(k, v, _)| {
        if *k == "hidden" {
            DEFAULT_HIDDEN.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        } else {
            v.to_string()
        }
    })
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut unknown = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {} is not `key = value`: {raw}", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if default_of(&key).is_none() {
            unknown.push(key);
            continue;
        }
        out.push((key, v.trim().to_string()));
    }
    if !unknown.is_empty() {
        return Err(usage(format!("unknown config keys: {}", unknown.join(", "))));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then `file` entries, then `flags` (`None` entries are
    /// ignored).
    pub fn resolve(file: &[(String, String)], flags: &[(&str, Option<String>)]) -> CliResult<Self> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, _, _)| (k.to_string(), default_of(k).expect("listed"))).collect();
        let mut explicit = BTreeSet::new();
        for (k, v) in file {
            values.insert(k.clone(), v.clone());
            explicit.insert(k.clone());
        }
        for (k, v) in flags {
            if let Some(v) = v {
                if !values.contains_key(*k) {
                    return Err(usage(format!("unknown key {k}")));
                }
                values.insert(k.to_string(), v.clone());
                explicit.insert(k.to_string());
            }
        }
        Ok(Self { values, explicit })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unlisted key {key}"))
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| usage(format!("bad value for {key}: `{v}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| usage(format!("bad entry `{s}` in {key}"))))
            .collect()
    }

    /// `config.<key>` entries for the global keys and the given groups.
    pub fn echo(&self, groups: &[Group]) -> Manifest {
        let mut m = Manifest::new();
        for (k, _, g) in KEYS {
            if *k == "threads" {
                continue;
            }
            if *g == Group::Global || groups.contains(g) {
                m.set(format!("config.{k}"), self.raw(k));
            }
        }
        m
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.get("seed")
    }

    pub fn threads(&self) -> CliResult<usize> {
        let t: usize = self.get("threads")?;
        if t == 0 {
            return Err(usage("threads must be at least 1"));
        }
        Ok(t)
    }

    pub fn scenario(&self) -> CliResult<ScenarioConfig> {
        let cfg = ScenarioConfig {
            n: self.get("n")?,
            rsu_height: self.get("rsu-height")?,
            rx_height: self.get("rx-height")?,
            lane_offsets: self.list("lane-offsets")?,
            street_length: self.get("street-length")?,
            blockage_probability: self.get("blockage")?,
            max_reflections: self.get("max-reflections")?,
            wall_distance: self.get("wall-distance")?,
            wall_setback: self.get("wall-setback")?,
            reflection_loss_db: self.get("reflection-loss-db")?,
            carrier_frequency: self.get("carrier-frequency")?,
            bandwidth: self.get("bandwidth")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn wideband(&self, scenario: &ScenarioConfig) -> CliResult<WidebandConfig> {
        let n_sc: usize = self.get("n-sc")?;
        let taps: usize = self.get("taps")?;
        if n_sc == 0 || taps == 0 || taps % n_sc != 0 {
            return Err(usage(format!("n-sc {n_sc} must be positive and divide taps {taps}")));
        }
        let rolloff: f64 = self.get("rolloff")?;
        if !(0.0..=1.0).contains(&rolloff) {
            return Err(usage(format!("rolloff {rolloff} outside [0, 1]")));
        }
        let mut w = WidebandConfig::for_array(scenario.n, scenario.bandwidth);
        w.taps = taps;
        w.stride = taps / n_sc;
        w.pulse = if rolloff == 0.0 { Pulse::Sinc } else { Pulse::RaisedCosine { rolloff } };
        Ok(w)
    }

    pub fn train(&self) -> CliResult<TrainConfig> {
        let max_batches = match self.raw("max-batches") {
            "none" | "" => None,
            _ => Some(self.get("max-batches")?),
        };
        let cfg = TrainConfig {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch-size")?,
            learning_rate: self.get("learning-rate")?,
            lr_halving_epochs: self.get("lr-halving-epochs")?,
            momentum: self.get("momentum")?,
            quant_interval: self.get("quant-interval")?,
            resolution: self.raw("bits").parse()?,
            train_snr_db: None,
            measurements: self.get("measurements")?,
            hidden: self.list("hidden")?,
            filter_norm: self.get("filter-norm")?,
            seed: self.seed()?,
            max_batches,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn snr_grid(&self) -> CliResult<Vec<f64>> {
        parse_grid(self.raw("snr-grid"))
    }
}

/// `a,b,c` or an inclusive range `start:stop:step`.
pub fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let text = text.trim();
    let bad = || usage(format!("bad grid `{text}`"));
    if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<CliResult<_>>()?;
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|i| start + i as f64 * step).collect());
    }
    let v: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    if v.is_empty() {
        return Err(usage("empty SNR grid"));
    }
    Ok(v)
}

macro_rules! flag_group {
    ($name:ident { $($(#[$meta:meta])* $field:ident => $key:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Default, Args)]
        pub struct $name {
            $($(#[$meta])* #[arg(long = $key, allow_hyphen_values = true)] pub $field: Option<String>,)*
        }

        impl $name {
            fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
                vec![$(($key, self.$field.clone())),*]
            }
        }
    };
}

flag_group!(ScenarioFlags {
    /// Array side N.
    n => "n",
    /// Number of samples.
    count => "count",
    /// `narrowband` or `wideband`.
    kind => "kind",
    /// Subcarriers kept from the tap DFT.
    n_sc => "n-sc",
    taps => "taps",
    rsu_height => "rsu-height",
    rx_height => "rx-height",
    /// Comma-separated lateral lane offsets in metres.
    lane_offsets => "lane-offsets",
    street_length => "street-length",
    /// LOS blockage probability.
    blockage => "blockage",
    max_reflections => "max-reflections",
    wall_distance => "wall-distance",
    wall_setback => "wall-setback",
    reflection_loss_db => "reflection-loss-db",
    carrier_frequency => "carrier-frequency",
    bandwidth => "bandwidth",
    /// Raised-cosine roll-off; 0 gives a sinc pulse.
    rolloff => "rolloff",
});

flag_group!(TrainFlags {
    /// `1`, `2` or `all`.
    stage => "stage",
    /// Stage-1 epochs.
    epochs => "epochs",
    stage2_epochs => "stage2-epochs",
    batch_size => "batch-size",
    learning_rate => "learning-rate",
    lr_halving_epochs => "lr-halving-epochs",
    momentum => "momentum",
    quant_interval => "quant-interval",
    /// Phase-shifter bits, or `inf`.
    bits => "bits",
    /// Stage-2 training SNR in dB.
    snr => "snr",
    /// Number of measurements M.
    measurements => "measurements",
    /// Comma-separated hidden layer widths.
    hidden => "hidden",
    filter_norm => "filter-norm",
    max_batches => "max-batches",
});

flag_group!(EvalFlags {
    /// SNR values in dB: `a,b,c` or `start:stop:step`.
    snr_grid => "snr-grid",
    /// Comma-separated measurement counts.
    m_grid => "m-grid",
    /// Phase-shifter bits of the random OMP matrix.
    omp_bits => "omp-bits",
    omp_sparsity => "omp-sparsity",
});

#[derive(Debug, Parser)]
#[command(name = "convcs", version, about = "Compressive beam alignment with learned convolutional sensing")]
pub struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic channel dataset.
    Gen {
        #[command(flatten)]
        flags: ScenarioFlags,
    },
    /// Train a model on a dataset.
    Train {
        dataset: PathBuf,
        /// Stage-1 model to continue from.
        #[arg(long)]
        from: Option<PathBuf>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Sweep alignment metrics over SNR and M.
    Eval {
        dataset: PathBuf,
        /// Learned method as `name=path`; repeat a name for several M.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Add the random-phase OMP baseline.
        #[arg(long)]
        omp: bool,
        /// Add the exhaustive-search oracle.
        #[arg(long)]
        oracle: bool,
        /// Print the per-row noise hashes.
        #[arg(long)]
        dump_noise_hashes: bool,
        #[command(flatten)]
        flags: EvalFlags,
    },
    /// Write the sensing mask of a model as an N x N CSV grid.
    ExportMask { model: PathBuf },
    /// Write the beamspace prior of a dataset as an N x N CSV grid.
    Prior { dataset: PathBuf },
}

impl Cli {
    fn resolve(&self, flags: Vec<(&'static str, Option<String>)>) -> CliResult<RunConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        let mut all = vec![("seed", self.seed.clone()), ("threads", self.threads.clone())];
        all.extend(flags);
        RunConfig::resolve(&file, &all)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Messages go to `stdout` and `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn std::io::Write) -> CliResult<()> {
    match &cli.command {
        Command::Gen { flags } => cmd_gen(cli, flags, stdout),
        Command::Train { dataset, from, flags } => cmd_train(cli, dataset, from.as_deref(), flags, stdout),
        Command::Eval { dataset, models, omp, oracle, dump_noise_hashes, flags } => {
            let sel = MethodSelection { models, omp: *omp, oracle: *oracle };
            cmd_eval(cli, dataset, &sel, *dump_noise_hashes, flags, stdout)
        }
        Command::ExportMask { model } => cmd_export_mask(cli, model, stdout),
        Command::Prior { dataset } => cmd_prior(cli, dataset, stdout),
    }
}

fn say(stdout: &mut dyn std::io::Write, line: String) -> CliResult<()> {
    writeln!(stdout, "{line}").map_err(|e| CliError::Lib(e.into()))
}

/// Samples of the configured scenario, narrowband or wideband.
pub fn generate(cfg: &RunConfig) -> CliResult<Vec<ChannelSample>> {
    let count: usize = cfg.get("count")?;
    if count == 0 {
        return Err(usage("count must be positive"));
    }
    let scenario = cfg.scenario()?;
    match cfg.raw("kind") {
        "narrowband" => Ok(gen_scenario(&scenario, count)?),
        "wideband" => {
            let w = cfg.wideband(&scenario)?;
            Ok(gen_wideband(&scenario, &w, count)?)
        }
        other => Err(usage(format!("kind must be narrowband or wideband, not `{other}`"))),
    }
}

fn cmd_gen(cli: &Cli, flags: &ScenarioFlags, stdout: &mut dyn std::io::Write) -> CliResult<()> {
    let mut cfg = cli.resolve(flags.pairs())?;
    if cfg.raw("kind") == "narrowband" {
        cfg.set("n-sc", "1".into());
    }
    let samples = generate(&cfg)?;
    let out = cli.out("dataset.bin");
    io::write_dataset(&out, &samples, &cfg.echo(&[Group::Scenario]))?;

    let los = samples.iter().filter(|s| s.los).count() as f64 / samples.len() as f64;
    let prior = beamspace_prior(&samples)?;
    let n = samples[0].side();
    say(stdout, format!("samples {}", samples.len()))?;
    say(stdout, format!("los_fraction {los:.4}"))?;
    say(stdout, format!("prior_support {} of {}", prior_support(&prior).len(), n * n))?;
    say(stdout, format!("wrote {}", out.display()))
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> CliResult<(io::Dataset, String)> {
    let data = io::read_dataset(path)?;
    if data.samples.is_empty() {
        return Err(CliError::Lib(Error::invalid("dataset is empty")));
    }
    if cfg.is_explicit("n") {
        let n: usize = cfg.get("n")?;
        if n != data.side() {
            return Err(CliError::Lib(Error::dim(format!(
                "config has N = {n}, dataset has N = {}",
                data.side()
            ))));
        }
    }
    Ok((data, io::sha256_file(path)?))
}

fn cmd_train(
    cli: &Cli,
    dataset: &Path,
    from: Option<&Path>,
    flags: &TrainFlags,
    stdout: &mut dyn std::io::Write,
) -> CliResult<()> {
    let mut cfg = cli.resolve(flags.pairs())?;
    let stage = cfg.raw("stage").to_string();
    if !matches!(stage.as_str(), "1" | "2" | "all") {
        return Err(usage(format!("stage must be 1, 2 or all, not `{stage}`")));
    }
    if stage == "2" && from.is_none() {
        return Err(usage("stage 2 needs --from <stage-1 model>"));
    }
    if stage != "2" && from.is_some() {
        return Err(usage("--from is only used with --stage 2"));
    }
    let (data, data_hash) = load_dataset(dataset, &cfg)?;
    let mut tc = cfg.train()?;
    let snr: f64 = cfg.get("snr")?;
    let stage2_epochs: usize = cfg.get("stage2-epochs")?;

    let mut extra = Manifest::new();
    let mut start: Option<ModelParams> = None;
    if let Some(p) = from {
        let model = io::read_model(p)?;
        if model.params.stage != Stage::One {
            return Err(CliError::Lib(Error::invalid("--from must point at a stage-1 model")));
        }
        // the stage-1 model fixes M and the resolution
        cfg.set("measurements", model.params.measurements().to_string());
        cfg.set("bits", model.params.resolution.to_string());
        extra.set("from_sha256", io::sha256_file(p)?);
        start = Some(model.params);
    }

    let mut params = match start {
        Some(p) => p,
        None => {
            let mut s1 = data.samples.clone();
            normalize_stage1(&mut s1)?;
            let trained = network::train_stage1(&s1, &tc)?;
            report(stdout, "stage 1", &trained.report)?;
            trained.params
        }
    };
    if stage != "1" {
        let mut s2 = data.samples.clone();
        normalize_eval(&mut s2)?;
        tc.epochs = stage2_epochs;
        tc.train_snr_db = Some(snr);
        let trained = network::train_stage2(&s2, &tc, Some(&params))?;
        report(stdout, "stage 2", &trained.report)?;
        params = trained.params;
    }

    let mut manifest = cfg.echo(&[Group::Train]);
    manifest.set("dataset_sha256", data_hash);
    for (k, v) in extra.entries() {
        manifest.set(k.clone(), v);
    }
    let out = cli.out("model.bin");
    io::write_model(&out, &params, &manifest)?;
    say(stdout, format!("wrote {}", out.display()))
}

fn report(stdout: &mut dyn std::io::Write, label: &str, r: &network::TrainReport) -> CliResult<()> {
    let loss = r.epoch_loss.last().copied().unwrap_or(f64::NAN);
    let acc = r.epoch_accuracy.last().copied().unwrap_or(f64::NAN);
    say(
        stdout,
        format!(
            "{label}: {} epochs, {} batches, final loss {loss:.6}, train accuracy {acc:.4}",
            r.epoch_loss.len(),
            r.batches
        ),
    )
}

struct MethodSelection<'a> {
    models: &'a [String],
    omp: bool,
    oracle: bool,
}

fn cmd_eval(
    cli: &Cli,
    dataset: &Path,
    sel: &MethodSelection,
    dump_noise_hashes: bool,
    flags: &EvalFlags,
    stdout: &mut dyn std::io::Write,
) -> CliResult<()> {
    let mut cfg = cli.resolve(flags.pairs())?;
    let snr_db = cfg.snr_grid()?;
    let (mut data, data_hash) = load_dataset(dataset, &cfg)?;
    normalize_eval(&mut data.samples)?;

    let mut manifest = Manifest::new();
    manifest.set("dataset_sha256", data_hash);
    let mut learned: Vec<(String, Vec<ModelParams>)> = Vec::new();
    for arg in sel.models {
        let (name, path) = arg
            .split_once('=')
            .ok_or_else(|| usage(format!("--model expects name=path, got `{arg}`")))?;
        if name.is_empty() || name.contains(',') {
            return Err(usage(format!("bad method name `{name}`")));
        }
        let path = Path::new(path);
        let model = io::read_model(path)?;
        manifest.set(format!("model.{name}.m{}", model.params.measurements()), io::sha256_file(path)?);
        match learned.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => v.push(model.params),
            None => learned.push((name.to_string(), vec![model.params])),
        }
    }
    if !cfg.is_explicit("m-grid") && !learned.is_empty() {
        let ms: BTreeSet<usize> = learned.iter().flat_map(|(_, v)| v.iter().map(ModelParams::measurements)).collect();
        cfg.set("m-grid", ms.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    }
    let measurements: Vec<usize> = cfg.list("m-grid")?;
    if measurements.is_empty() {
        return Err(usage("empty M grid"));
    }

    let mut methods: Vec<Method> = learned.into_iter().map(|(n, v)| Method::learned(n, v)).collect();
    if sel.omp {
        let resolution: Resolution = cfg.raw("omp-bits").parse()?;
        let omp = OmpConfig { sparsity: cfg.get("omp-sparsity")?, ..OmpConfig::default() };
        methods.push(Method::random_omp(resolution, omp));
    }
    if sel.oracle {
        methods.push(Method::oracle());
    }
    if methods.is_empty() {
        return Err(usage("no methods selected; pass --model, --omp or --oracle"));
    }
    let mut names = BTreeSet::new();
    for m in &methods {
        if !names.insert(m.name.clone()) {
            return Err(usage(format!("method name `{}` used twice", m.name)));
        }
    }
    manifest.set("methods", methods.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join(","));

    let sweep_cfg = SweepConfig { snr_db, measurements, seed: cfg.seed()?, threads: cfg.threads()? };
    let rep = sweep(&data.samples, &methods, &sweep_cfg)?;
    if dump_noise_hashes {
        for r in &rep.rows {
            say(stdout, format!("noise {} {} {} {}", r.snr_db, r.m, r.method, r.noise_hash))?;
        }
    }
    let mut full = cfg.echo(&[Group::Eval]);
    for (k, v) in manifest.entries() {
        full.set(k.clone(), v);
    }
    let out = cli.out("report.csv");
    io::write_csv(&out, &rep.to_csv(), &full)?;
    say(stdout, format!("wrote {} rows to {}", rep.rows.len(), out.display()))
}

fn cmd_export_mask(cli: &Cli, model: &Path, stdout: &mut dyn std::io::Write) -> CliResult<()> {
    let cfg = cli.resolve(Vec::new())?;
    let file = io::read_model(model)?;
    let grid = mask(&file.params.filter)?;
    let mut manifest = cfg.echo(&[]);
    manifest.set("model_sha256", io::sha256_file(model)?);
    let out = cli.out("mask.csv");
    io::write_csv(&out, &io::grid_csv(&grid), &manifest)?;
    say(stdout, format!("wrote {}", out.display()))
}

fn cmd_prior(cli: &Cli, dataset: &Path, stdout: &mut dyn std::io::Write) -> CliResult<()> {
    let cfg = cli.resolve(Vec::new())?;
    let (data, hash) = load_dataset(dataset, &cfg)?;
    let prior = beamspace_prior(&data.samples)?;
    let mut manifest = cfg.echo(&[]);
    manifest.set("dataset_sha256", hash);
    let out = cli.out("prior.csv");
    io::write_csv(&out, &io::grid_csv(&prior), &manifest)?;
    say(stdout, format!("support {} of {}", prior_support(&prior).len(), data.side() * data.side()))?;
    say(stdout, format!("wrote {}", out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("-10:30:5").unwrap().len(), 9);
        assert_eq!(parse_grid("0, 10").unwrap(), vec![0.0, 10.0]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn config_text_rejects_unknown_keys() {
        let err = parse_config_text("epochs = 3\nfoo = 1\nbar=2").unwrap_err();
        assert!(err.to_string().contains("foo, bar"));
        assert_eq!(err.exit_code(), EXIT_USAGE);
        let ok = parse_config_text("# c\n\nbatch_size = 4 # trailing").unwrap();
        assert_eq!(ok, vec![("batch-size".to_string(), "4".to_string())]);
    }

    #[test]
    fn precedence() {
        let file = parse_config_text("epochs = 7\nbits = 3").unwrap();
        let cfg = RunConfig::resolve(&file, &[("epochs", Some("9".into())), ("snr", None)]).unwrap();
        assert_eq!(cfg.raw("epochs"), "9");
        assert_eq!(cfg.raw("bits"), "3");
        assert_eq!(cfg.raw("snr"), "0");
        assert!(cfg.is_explicit("bits") && !cfg.is_explicit("snr"));
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::Lib(Error::Singular { row: 0, col: 0, magnitude: 0.0 }).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::Lib(Error::invalid("x")).exit_code(), EXIT_DATA);
        assert_eq!(usage("x").exit_code(), EXIT_USAGE);
    }
}
