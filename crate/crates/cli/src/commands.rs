//! Subcommands of the `hlc` binary.

use std::fmt::Write as _;
use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hlc_core::audio::{process_file, FrameConfig};
use hlc_core::config::{ConfigError, ModelConfig};
use hlc_core::mc::{compare_models, NestingSpec};
use hlc_core::model::{synthesize, GainProcess, HearingLossParams, SyntheticSpec};
use hlc_core::pe::{estimate_detailed, PeConfig, TrainingSet};
use hlc_core::sp::{characterize, run_sequence, trace_csv};
use hlc_core::{GainState, Theta};
use thiserror::Error;

use crate::service::{self, ServerConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] hlc_core::model::ModelError),
    #[error(transparent)]
    Sp(#[from] hlc_core::sp::SpError),
    #[error(transparent)]
    Pe(#[from] hlc_core::pe::PeError),
    #[error(transparent)]
    Mc(#[from] hlc_core::mc::McError),
    #[error(transparent)]
    Audio(#[from] hlc_core::audio::AudioError),
    #[error(transparent)]
    Service(#[from] service::ServiceError),
}

impl CliError {
    /// 2 for problems with the invocation itself, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingInput(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hlc", version, about = "Hearing-loss compensation by Bayesian inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Infer gains for a level sequence or a WAV file.
    Sp(SpArgs),
    /// Estimate the parameter posterior from preference data.
    Pe(PeArgs),
    /// Bayes factor of the unconstrained-gain model against the reference.
    Mc(McArgs),
    /// Write synthetic preference data as JSON Lines.
    GenData(GenDataArgs),
    /// Run the HTTP service for the appraisal loop.
    Serve(ServeArgs),
}

/// θ on the command line; flags override the config file.
#[derive(Debug, Args, Default)]
pub struct ThetaArgs {
    /// key = value file with θ and the priors.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long = "obs-var")]
    pub obs_var: Option<f64>,
    #[arg(long = "gain-prec")]
    pub gain_prec: Option<f64>,
}

impl ThetaArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(path) => ModelConfig::load(existing(path)?)?,
            None => ModelConfig::default(),
        };
        let t = cfg.theta;
        cfg.theta = Theta::new(
            self.alpha.unwrap_or(t.hearing.alpha),
            self.beta.unwrap_or(t.hearing.beta),
            self.obs_var.unwrap_or(t.obs_variance),
            self.gain_prec.unwrap_or(t.gain_precision),
        )?;
        cfg.theta.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SpArgs {
    #[command(flatten)]
    pub theta: ThetaArgs,
    /// Comma-separated levels (dB SPL), repeated in blocks of --steps.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels: Vec<f64>,
    /// Steps per level block.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Number of times the level pattern repeats.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Where to write the per-step trace CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// key = value file; only the priors are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stop once no posterior mean moves by more than this.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub omega: f64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProcessKind {
    /// Levels uniform in [low, high]; gains from the exact inverse.
    Uniform,
    /// Gains follow a reflected random walk in [low, high].
    RandomWalk,
    /// Gains uniform in [low, high], independent across steps.
    Independent,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Slices per segment; defaults to a single segment.
    #[arg(long)]
    pub segment: Option<usize>,
    /// Observation noise standard deviation (dB).
    #[arg(long, default_value_t = 3.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = ProcessKind::Uniform)]
    pub process: ProcessKind,
    #[arg(long, default_value_t = 30.0)]
    pub low: f64,
    #[arg(long, default_value_t = 100.0)]
    pub high: f64,
    /// Random-walk gain precision.
    #[arg(long = "gain-prec", default_value_t = 1.0)]
    pub gain_prec: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1..))]
    pub port: u16,
    /// Demo WAV; a synthetic 55/80 dB tone is used when absent.
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Preference database (JSON Lines).
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Appraisal log (JSON Lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
}

fn existing(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Write { path: path.display().to_string(), source })
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|source| CliError::Write { path: "stdout".into(), source })
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Sp(a) => sp(&a, out),
        Command::Pe(a) => pe(&a, out),
        Command::Mc(a) => mc(&a, out),
        Command::GenData(a) => gen_data(&a, out),
        Command::Serve(a) => serve(a),
    }
}

fn priors_from(config: &Option<PathBuf>) -> Result<ModelConfig> {
    ThetaArgs { config: config.clone(), ..ThetaArgs::default() }.resolve()
}

pub fn sp(a: &SpArgs, out: &mut dyn Write) -> Result<()> {
    let theta = a.theta.resolve()?.theta;
    if let Some(input) = &a.input {
        let output = a.output.as_ref().ok_or_else(|| CliError::Usage("--input needs --output".into()))?;
        let frames = FrameConfig::default();
        let processed = process_file(existing(input)?, output, &theta, &frames)?;
        if let Some(csv) = &a.csv {
            write_file(csv, trace_csv(&processed.levels, &processed.gains).as_bytes())?;
        }
        let mut text = String::new();
        let _ = writeln!(text, "frames = {}", processed.levels.len());
        let _ = writeln!(text, "clipped_samples = {}", processed.clipped);
        let _ = writeln!(text, "output = {}", output.display());
        return emit(out, &text);
    }
    if a.levels.is_empty() {
        return Err(CliError::Usage("give --levels or --input".into()));
    }
    if a.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let pattern: Vec<f64> = a.levels.iter().flat_map(|&l| std::iter::repeat_n(l, a.steps)).collect();
    let levels = pattern.repeat(a.repeats.max(1));
    let states = run_sequence(&levels, &theta, GainState::default())?;
    if let Some(csv) = &a.csv {
        write_file(csv, trace_csv(&levels, &states).as_bytes())?;
    }
    let mut text = String::new();
    let last = states.last().expect("at least one step");
    let _ = writeln!(text, "steps = {}", levels.len());
    let _ = writeln!(text, "final_gain_dB = {}", last.mean);
    let lo = a.levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = a.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo < hi {
        let c = characterize(&theta, lo, hi)?;
        let frames = FrameConfig::default();
        let _ = writeln!(text, "CR = {}", c.compression_ratio);
        let _ = writeln!(text, "attack_steps = {}", c.attack_steps);
        let _ = writeln!(text, "attack_ms = {}", frames.steps_to_ms(c.attack_steps));
        let _ = writeln!(text, "release_steps = {}", c.release_steps);
        let _ = writeln!(text, "release_ms = {}", frames.steps_to_ms(c.release_steps));
        for (level, gain) in &c.steady_gain_per_level {
            let _ = writeln!(text, "steady_gain_dB[{level}] = {gain}");
        }
    }
    emit(out, &text)
}

fn load_data(path: &Path) -> Result<TrainingSet> {
    Ok(TrainingSet::read_jsonl(existing(path)?)?)
}

pub fn pe(a: &PeArgs, out: &mut dyn Write) -> Result<()> {
    let priors = priors_from(&a.config)?.priors;
    let data = load_data(&a.data)?;
    let cfg = PeConfig { iterations: a.iters, early_stop: a.tolerance, ..PeConfig::default() };
    let est = estimate_detailed(&data, &priors, &cfg)?;
    for w in &est.warnings {
        eprintln!("warning: {w}");
    }
    let mut text = est.posterior.report();
    let _ = writeln!(text, "sweeps = {}", est.sweeps);
    emit(out, &text)
}

pub fn mc(a: &McArgs, out: &mut dyn Write) -> Result<()> {
    let priors = priors_from(&a.config)?.priors;
    let data = load_data(&a.data)?;
    let spec = NestingSpec::new(a.omega)?;
    let cfg = PeConfig { iterations: a.iters, ..PeConfig::default() };
    let bf = compare_models(&data, &priors, &spec, &cfg)?;
    emit(out, &bf.report())
}

pub fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let target = HearingLossParams::new(a.alpha, a.beta)?;
    let process = match a.process {
        ProcessKind::Uniform => GainProcess::UniformLevels { low: a.low, high: a.high },
        ProcessKind::RandomWalk => GainProcess::RandomWalk { precision: a.gain_prec, low: a.low, high: a.high },
        ProcessKind::Independent => GainProcess::Independent { low: a.low, high: a.high },
    };
    let mut spec = SyntheticSpec { noise_sd: a.noise, seed: a.seed, ..SyntheticSpec::new(target, a.steps, process) };
    if let Some(len) = a.segment {
        spec.segment_len = len;
    }
    let data = synthesize(&spec)?;
    let mut buf = Vec::new();
    data.write_jsonl(&mut buf)?;
    write_file(&a.output, &buf)?;
    emit(out, &format!("segments = {}\nsteps = {}\n", data.segments.len(), data.steps()))
}

fn serve(a: ServeArgs) -> Result<()> {
    let model = priors_from(&a.config)?;
    if let Some(audio) = &a.audio {
        existing(audio)?;
    }
    let cfg = ServerConfig {
        bind: a.bind,
        port: a.port,
        audio: a.audio,
        db_path: a.db,
        log_path: a.log,
        seed: a.seed,
        priors: model.priors,
        iterations: a.iters,
    };
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Service(service::ServiceError::Io(e.to_string())))?;
    runtime.block_on(service::serve(cfg))?;
    Ok(())
}
