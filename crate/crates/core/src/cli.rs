//! Command-line front end.
//!
//! Every command except `replay` first writes a run-config JSON holding the
//! fully resolved command (absolute paths, seeds, grids), the harness
//! version and the PRNG identifier. `replay --config` re-runs it, either in
//! full or for a single `(dataset, k, repeat)` cell.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! configuration. Failures print one JSON object to stderr.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{bench_inference, BenchConfig};
use crate::corpus::{
    amalgamate_labels, class_counts, class_names, export_csv, filter_ambient, load_manifest, save_manifest,
    split_train_test, CorpusError, Dataset, DatasetRegistry, SplitSpec,
};
use crate::embedder::{
    AudioBackend, AudioSource, EmbedError, Embedder, EmbeddingCache, EmbeddingProvider, FileAudio, MockEmbedder,
};
use crate::eval::{
    dreg, dreg_cell, embed_clips, emit_report, fewshot_cell, holdout_eval_set, load_report, sweep, with_workers,
    DregConfig, EvalError, EvalReport, FewshotConfig, ReportFormat, SweepSources, SweepSpec,
};
use crate::pretrain::{
    derive_heads, pretrain_toy, MixtureConfig, PretrainError, PretrainHparams, SourceSpec, ToyArch,
    ToyEmbedderModel,
};
use crate::probe::{
    auc_roc_macro, score_examples, train_probe, LabeledEmbedding, Optimizer, ProbeError, ProbeHparams,
};
use crate::rng::PRNG_ID;
use crate::synthetic::SyntheticSpec;

/// Environment variable naming the default directory for embedding caches.
pub const CACHE_DIR_ENV: &str = "PAMKIT_CACHE_DIR";
pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_owned(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 3,
            _ => 1,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let value = match self {
            CliError::Config { field, message } => serde_json::json!({
                "error": "config", "field": field, "message": message,
            }),
            other => serde_json::json!({ "error": "runtime", "message": other.to_string() }),
        };
        value.to_string()
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "pamkit", version, about = "Bioacoustic embedding evaluation toolkit")]
pub struct Cli {
    /// Upper bound on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Where to write the run-config JSON (default: next to `--out`, or
    /// `pamkit-<command>.run.json` in the working directory).
    #[arg(long, global = true)]
    pub run_config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Validate a manifest and optionally convert it (JSON or CSV by extension).
    Manifest(ManifestArgs),
    /// Write a synthetic multi-domain corpus (WAV files plus manifest.json).
    SynthCorpus(SynthArgs),
    /// Embed every clip and store the vectors in an embedding cache.
    Embed(EmbedArgs),
    /// Train and evaluate one linear probe on one seeded split.
    Probe(ProbeArgs),
    /// Few-shot linear-probe evaluation over k and repeats.
    Fewshot(FewshotArgs),
    /// Leave-one-dataset-out pretraining and evaluation.
    Dreg(DregArgs),
    /// Pretrain the toy embedder on a mixture of datasets.
    Pretrain(PretrainArgs),
    /// Staged hyperparameter sweep over pretraining configurations.
    Sweep(SweepArgs),
    /// Inference speed over a batch size × worker grid.
    Bench(BenchArgs),
    /// Aggregate one or more evaluation reports.
    Report(ReportArgs),
    /// Re-run a command from its run-config JSON.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Manifest(_) => "manifest",
            Command::SynthCorpus(_) => "synth-corpus",
            Command::Embed(_) => "embed",
            Command::Probe(_) => "probe",
            Command::Fewshot(_) => "fewshot",
            Command::Dreg(_) => "dreg",
            Command::Pretrain(_) => "pretrain",
            Command::Sweep(_) => "sweep",
            Command::Bench(_) => "bench",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }

    fn out(&self) -> Option<&Path> {
        match self {
            Command::Manifest(a) => a.out.as_deref(),
            Command::SynthCorpus(a) => Some(&a.out),
            Command::Embed(a) => a.out.as_deref(),
            Command::Probe(a) => a.out.as_deref(),
            Command::Fewshot(a) => a.out.as_deref(),
            Command::Dreg(a) => a.out.as_deref(),
            Command::Pretrain(a) => Some(&a.out),
            Command::Sweep(a) => a.out.as_deref(),
            Command::Bench(a) => a.out.as_deref(),
            Command::Report(a) => a.out.as_deref(),
            Command::Replay(a) => a.out.as_deref(),
        }
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Manifest(a) => a.out = Some(out),
            Command::SynthCorpus(a) => a.out = out,
            Command::Embed(a) => a.out = Some(out),
            Command::Probe(a) => a.out = Some(out),
            Command::Fewshot(a) => a.out = Some(out),
            Command::Dreg(a) => a.out = Some(out),
            Command::Pretrain(a) => a.out = out,
            Command::Sweep(a) => a.out = Some(out),
            Command::Bench(a) => a.out = Some(out),
            Command::Report(a) => a.out = Some(out),
            Command::Replay(a) => a.out = Some(out),
        }
    }
}

/// Everything needed to re-run a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub harness_version: String,
    pub prng: String,
    pub workers: Option<usize>,
    #[serde(flatten)]
    pub command: Command,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ManifestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Converted manifest: `.json` or `.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Apply label amalgamation with this threshold before writing.
    #[arg(long)]
    pub min_class_size: Option<usize>,
    #[arg(long)]
    pub drop_ambient: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',')]
    pub domains: Option<Vec<String>>,
    #[arg(long)]
    pub classes_per_domain: Option<usize>,
    #[arg(long)]
    pub clips_per_class: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Neighbouring domains share tone classes at this stride.
    #[arg(long)]
    pub overlap_stride: Option<usize>,
}

impl SynthArgs {
    fn spec(&self) -> SyntheticSpec {
        let d = SyntheticSpec::default();
        SyntheticSpec {
            domains: self.domains.clone().unwrap_or(d.domains),
            classes_per_domain: self.classes_per_domain.unwrap_or(d.classes_per_domain),
            clips_per_class: self.clips_per_class.unwrap_or(d.clips_per_class),
            noise_scale: self.noise_scale.unwrap_or(d.noise_scale),
            overlap_stride: self.overlap_stride,
            seed: self.seed,
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `mock`, `mock-<preset>` or `toy:<model.json>`.
    #[arg(long, default_value = "mock")]
    pub backend: String,
    /// Cache file (default: `$PAMKIT_CACHE_DIR/<backend>.pemb`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub datasets: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

/// Linear-probe training settings.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProbeOpts {
    #[arg(long, default_value_t = 128)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub probe_lr: f64,
    #[arg(long, default_value_t = 32)]
    pub probe_batch: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub probe_optimizer: OptimizerArg,
}

impl ProbeOpts {
    fn hparams(&self) -> ProbeHparams {
        ProbeHparams {
            epochs: self.epochs,
            batch_size: self.probe_batch,
            lr: self.probe_lr,
            optimizer: match self.probe_optimizer {
                OptimizerArg::Sgd => Optimizer::Sgd,
                OptimizerArg::Adam => Optimizer::adam(),
            },
            ..ProbeHparams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "mock")]
    pub backend: String,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub k: usize,
    /// Seed of the split and of probe initialisation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 42)]
    pub min_class_size: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub probe: ProbeOpts,
    /// Trained probe as JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Result JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FewshotArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `mock`, `mock-<preset>`, `toy:<model.json>` or `cache:<file.pemb>`.
    #[arg(long, default_value = "mock")]
    pub backend: String,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Datasets to evaluate (default: all).
    #[arg(long, value_delimiter = ',')]
    pub datasets: Option<Vec<String>>,
    /// Amalgamation threshold; 0 disables.
    #[arg(long, default_value_t = 42)]
    pub min_class_size: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub probe: ProbeOpts,
    /// Records as `.csv` or `.json` (default: CSV on stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pretraining settings shared by `pretrain`, `dreg` and `sweep`.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PretrainOpts {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// `t0`, `t1` or `t2`.
    #[arg(long, default_value = "t1")]
    pub arch: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

impl PretrainOpts {
    fn hparams(&self) -> Result<PretrainHparams> {
        let arch = ToyArch::preset(&self.arch)
            .ok_or_else(|| CliError::config("--arch", format!("unknown architecture {:?}", self.arch)))?;
        if !(self.lr > 0.0) {
            return Err(CliError::config("--lr", "must be positive"));
        }
        Ok(PretrainHparams {
            lr: self.lr,
            arch,
            ..PretrainHparams::default()
        })
    }

    fn apply(&self, mut mix: MixtureConfig) -> Result<MixtureConfig> {
        if self.batch_size == 0 {
            return Err(CliError::config("--batch-size", "must be positive"));
        }
        mix.batch_size = self.batch_size;
        mix.steps = self.steps;
        Ok(mix)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DregArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Amalgamation threshold for the holdout; 0 disables.
    #[arg(long, default_value_t = 42)]
    pub min_class_size: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub pretrain: PretrainOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub probe: ProbeOpts,
    /// Mixture JSON over the whole registry (default: uniform).
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    /// Records of all rotations (default: CSV on stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-rotation summary JSON (training sets, heads, losses, errors).
    #[arg(long)]
    pub rotations_out: Option<PathBuf>,
}

impl DregArgs {
    fn config(&self, workers: Option<usize>) -> Result<DregConfig> {
        let fewshot = fewshot_config(&self.ks, self.repeats, self.seed, &self.probe, workers)?;
        let mut cfg = DregConfig::new(fewshot, self.seed);
        cfg.hparams = self.pretrain.hparams()?;
        cfg.min_class_size = (self.min_class_size > 0).then_some(self.min_class_size);
        Ok(cfg)
    }

    /// Resolves the mixture against the registry and applies step and
    /// batch settings.
    fn finish(&self, mut cfg: DregConfig, registry: &DatasetRegistry) -> Result<DregConfig> {
        let base = match &self.mixture {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::config("--mixture", format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::config("--mixture", e.to_string()))?
            }
            None => cfg.full_mixture(registry),
        };
        let mix = self.pretrain.apply(base)?;
        mix.validate().map_err(|e| CliError::config("--mixture", e.to_string()))?;
        cfg.mixture = Some(mix);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training datasets as one uniform source (default: all).
    #[arg(long, value_delimiter = ',')]
    pub datasets: Option<Vec<String>>,
    /// Mixture JSON; overrides `--datasets`.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub pretrain: PretrainOpts,
    /// Model JSON; weights go to a sibling `.bin`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPreset {
    Reefset,
    ReefBird,
    ReefBirdFreesound,
}

impl SweepPreset {
    fn key(self) -> &'static str {
        match self {
            SweepPreset::Reefset => "reefset",
            SweepPreset::ReefBird => "reef_bird",
            SweepPreset::ReefBirdFreesound => "reef_bird_freesound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub preset: SweepPreset,
    /// In-domain training datasets.
    #[arg(long, value_delimiter = ',', required = true)]
    pub reef: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub bird: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub freesound: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub validation: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "4,32")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub pretrain: PretrainOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub probe: ProbeOpts,
    /// Sweep table CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// `mock`, `mock-<preset>` or `toy:<model.json>`.
    #[arg(long, default_value = "mock")]
    pub backend: String,
    #[arg(long, default_value_t = 3600.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 32_000)]
    pub rate: u32,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
    pub batch_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8,12,16")]
    pub worker_grid: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cell CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Record files (`.csv` or `.json`).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Aggregates CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the merged records (`.csv` or `.json`).
    #[arg(long)]
    pub merged: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Only this cell of a `fewshot` or `dreg` run: `dataset,k,repeat`.
    #[arg(long)]
    pub cell: Option<String>,
    /// Output override (default: the recorded output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if cli.workers == Some(0) {
        return Err(CliError::config("--workers", "must be positive"));
    }
    if let Command::Replay(args) = cli.command {
        return replay(&args);
    }
    let command = resolve(cli.command)?;
    let config = RunConfig {
        harness_version: HARNESS_VERSION.to_owned(),
        prng: PRNG_ID.to_owned(),
        workers: cli.workers,
        command,
    };
    let path = cli.run_config.unwrap_or_else(|| default_run_config_path(&config.command));
    write_file(&path, serde_json::to_string_pretty(&config)?.as_bytes())?;
    dispatch(&config.command, config.workers)
}

fn default_run_config_path(command: &Command) -> PathBuf {
    match command.out() {
        Some(out) if matches!(command, Command::SynthCorpus(_)) => out.join("run.json"),
        Some(out) => {
            let mut s = out.as_os_str().to_owned();
            s.push(".run.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("pamkit-{}.run.json", command.name())),
    }
}

fn absolute(path: &Path, field: &str) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| CliError::config(field, format!("{}: {e}", path.display())))
}

fn existing(path: &Path, field: &str) -> Result<PathBuf> {
    if !path.exists() {
        return Err(CliError::config(field, format!("{} does not exist", path.display())));
    }
    absolute(path, field)
}

fn resolve_backend(backend: &str, field: &str) -> Result<String> {
    match Backend::parse(backend, field)? {
        Backend::Toy(p) => Ok(format!("toy:{}", existing(&p, field)?.display())),
        Backend::Cache(p) => Ok(format!("cache:{}", existing(&p, field)?.display())),
        Backend::Mock(_) => Ok(backend.to_owned()),
    }
}

fn resolve_out(out: &mut Option<PathBuf>) -> Result<()> {
    if let Some(p) = out {
        *p = absolute(p, "--out")?;
    }
    Ok(())
}

/// Makes every path absolute and checks inputs exist, so the recorded
/// command runs the same from any working directory.
fn resolve(mut command: Command) -> Result<Command> {
    match &mut command {
        Command::Manifest(a) => {
            a.manifest = existing(&a.manifest, "--manifest")?;
            resolve_out(&mut a.out)?;
        }
        Command::SynthCorpus(a) => a.out = absolute(&a.out, "--out")?,
        Command::Embed(a) => {
            a.manifest = existing(&a.manifest, "--manifest")?;
            a.backend = resolve_backend(&a.backend, "--backend")?;
            if a.out.is_none() {
                let dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| ".".into());
                let name = Backend::parse(&a.backend, "--backend")?.label();
                a.out = Some(dir.join(format!("{name}.pemb")));
            }
            resolve_out(&mut a.out)?;
        }
        Command::Probe(a) => {
            a.manifest = existing(&a.manifest, "--manifest")?;
            a.backend = resolve_backend(&a.backend, "--backend")?;
            resolve_out(&mut a.out)?;
            if let Some(p) = &mut a.model_out {
                *p = absolute(p, "--model-out")?;
            }
        }
        Command::Fewshot(a) => {
            a.manifest = existing(&a.manifest, "--manifest")?;
            a.backend = resolve_backend(&a.backend, "--backend")?;
            resolve_out(&mut a.out)?;
        }
        Command::Dreg(a) => {
            a.manifest = existing(&a.manifest, "--manifest")?;
            if let Some(p) = &mut a.mixture {
                *p = existing(p, "--mixture")?;
            }
            resolve_out(&mut a.out)?;
            if let Some(p) = &mut a.rotations_out {
                *p = absolute(p, "--rotations-out")?;
            }
        }
        Command::Pretrain(a) => {
            a.manifest = existing(&a.manifest, "--manifest")?;
            if let Some(p) = &mut a.mixture {
                *p = existing(p, "--mixture")?;
            }
            a.out = absolute(&a.out, "--out")?;
        }
        Command::Sweep(a) => {
            a.manifest = existing(&a.manifest, "--manifest")?;
            resolve_out(&mut a.out)?;
        }
        Command::Bench(a) => {
            a.backend = resolve_backend(&a.backend, "--backend")?;
            resolve_out(&mut a.out)?;
        }
        Command::Report(a) => {
            for p in &mut a.inputs {
                *p = existing(p, "inputs")?;
            }
            resolve_out(&mut a.out)?;
            if let Some(p) = &mut a.merged {
                *p = absolute(p, "--merged")?;
            }
        }
        Command::Replay(_) => unreachable!("replay is not recorded"),
    }
    Ok(command)
}

fn dispatch(command: &Command, workers: Option<usize>) -> Result<()> {
    match command {
        Command::Manifest(a) => cmd_manifest(a),
        Command::SynthCorpus(a) => cmd_synth(a),
        Command::Embed(a) => cmd_embed(a, workers),
        Command::Probe(a) => cmd_probe(a, workers),
        Command::Fewshot(a) => cmd_fewshot(a, workers),
        Command::Dreg(a) => cmd_dreg(a, workers),
        Command::Pretrain(a) => cmd_pretrain(a, workers),
        Command::Sweep(a) => cmd_sweep(a, workers),
        Command::Bench(a) => cmd_bench(a),
        Command::Report(a) => cmd_report(a),
        Command::Replay(a) => replay(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes to `out`, or stdout when `None`.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_file(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Embedding backend named on the command line.
#[derive(Debug, Clone, PartialEq)]
enum Backend {
    /// `mock` or `mock-<preset>`.
    Mock(Option<String>),
    Toy(PathBuf),
    Cache(PathBuf),
}

impl Backend {
    fn parse(s: &str, field: &str) -> Result<Self> {
        if let Some(p) = s.strip_prefix("toy:") {
            return Ok(Backend::Toy(p.into()));
        }
        if let Some(p) = s.strip_prefix("cache:") {
            return Ok(Backend::Cache(p.into()));
        }
        if s == "mock" {
            return Ok(Backend::Mock(None));
        }
        if let Some(preset) = s.strip_prefix("mock-") {
            if crate::embedder::EmbedderSpec::preset(preset).is_some() {
                return Ok(Backend::Mock(Some(preset.to_owned())));
            }
        }
        Err(CliError::config(
            field,
            format!("unknown backend {s:?}; expected mock, mock-<preset>, toy:<path> or cache:<path>"),
        ))
    }

    fn label(&self) -> String {
        match self {
            Backend::Mock(None) => "mock".into(),
            Backend::Mock(Some(p)) => format!("mock-{p}"),
            Backend::Toy(p) | Backend::Cache(p) => {
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
            }
        }
    }

    fn embedder(&self, field: &str) -> Result<Arc<dyn Embedder>> {
        match self {
            Backend::Mock(preset) => {
                let mut spec = match preset {
                    Some(p) => crate::embedder::EmbedderSpec::preset(p).expect("checked in parse"),
                    None => MockEmbedder::named("mock")?.spec().clone(),
                };
                spec.name = self.label();
                Ok(Arc::new(MockEmbedder::new(spec)?))
            }
            Backend::Toy(p) => Ok(Arc::new(ToyEmbedderModel::load(p)?)),
            Backend::Cache(_) => Err(CliError::config(field, "a cache backend cannot embed audio")),
        }
    }

    fn provider(&self, audio: Arc<dyn AudioSource>, field: &str) -> Result<Box<dyn EmbeddingProvider>> {
        match self {
            Backend::Cache(p) => Ok(Box::new(EmbeddingCache::load(p)?)),
            other => Ok(Box::new(AudioBackend::new(other.embedder(field)?, audio))),
        }
    }
}

fn manifest_audio(manifest: &Path) -> Arc<dyn AudioSource> {
    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    Arc::new(FileAudio { root })
}

fn load_registry(manifest: &Path) -> Result<DatasetRegistry> {
    load_manifest(manifest).map_err(|e| CliError::config("--manifest", format!("{}: {e}", manifest.display())))
}

fn pick_datasets<'a>(registry: &'a DatasetRegistry, ids: Option<&[String]>, field: &str) -> Result<Vec<&'a Dataset>> {
    match ids {
        None => Ok(registry.datasets().iter().collect()),
        Some(ids) => ids
            .iter()
            .map(|id| registry.get(id).map_err(|e| CliError::config(field, e.to_string())))
            .collect(),
    }
}

fn amalgamated(ds: &Dataset, min_class_size: usize) -> Dataset {
    Dataset {
        id: ds.id.clone(),
        clips: amalgamate_labels(&ds.clips, min_class_size),
    }
}

fn fewshot_config(
    ks: &[usize],
    repeats: usize,
    seed: u64,
    probe: &ProbeOpts,
    workers: Option<usize>,
) -> Result<FewshotConfig> {
    let cfg = FewshotConfig {
        ks: ks.to_vec(),
        repeats,
        base_seed: seed,
        probe: probe.hparams(),
        workers,
        ..FewshotConfig::default()
    };
    cfg.validate().map_err(|e| CliError::config("--ks/--repeats", e.to_string()))?;
    Ok(cfg)
}

/// Per-class columns of a report over `datasets`: every class that can
/// appear, so a single replayed cell is written with the same header.
fn class_columns<'a>(datasets: impl IntoIterator<Item = &'a Dataset>) -> Vec<String> {
    let set: BTreeSet<String> = datasets.into_iter().flat_map(|d| class_names(&d.clips)).collect();
    set.into_iter().collect()
}

fn write_records(report: &EvalReport, classes: &[String], out: Option<&Path>) -> Result<()> {
    match out.and_then(ReportFormat::from_path) {
        Some(ReportFormat::Json) => emit_report(report, out.expect("matched Some"), ReportFormat::Json)?,
        _ => {
            let mut buf = Vec::new();
            report.write_csv_with_classes(&mut buf, classes)?;
            emit(out, &buf)?;
        }
    }
    Ok(())
}

fn cmd_manifest(a: &ManifestArgs) -> Result<()> {
    let mut registry = load_registry(&a.manifest)?;
    if let Some(m) = a.min_class_size {
        registry = registry.map_clips(|c| amalgamate_labels(c, m));
    }
    if a.drop_ambient {
        registry = registry.map_clips(filter_ambient);
    }
    if let Some(out) = &a.out {
        match out.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let mut buf = Vec::new();
                export_csv(&registry, &mut buf)?;
                write_file(out, &buf)?;
            }
            _ => save_manifest(&registry, out)?,
        }
    }
    let summary: Vec<serde_json::Value> = registry
        .datasets()
        .iter()
        .map(|d| serde_json::json!({ "id": d.id, "clips": d.clips.len(), "classes": class_counts(&d.clips) }))
        .collect();
    println!("{}", serde_json::json!({ "datasets": summary }));
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let registry = a.spec().write_to_dir(&a.out)?;
    println!(
        "{}",
        serde_json::json!({
            "manifest": a.out.join("manifest.json"),
            "datasets": registry.dataset_ids(),
            "clips": registry.clips().count(),
        })
    );
    Ok(())
}

fn cmd_embed(a: &EmbedArgs, workers: Option<usize>) -> Result<()> {
    let registry = load_registry(&a.manifest)?;
    let backend = Backend::parse(&a.backend, "--backend")?;
    let provider = AudioBackend::new(backend.embedder("--backend")?, manifest_audio(&a.manifest));
    let datasets = pick_datasets(&registry, a.datasets.as_deref(), "--datasets")?;
    let clips: Vec<_> = datasets.iter().flat_map(|d| d.clips.iter().cloned()).collect();
    let vectors = with_workers(workers, || embed_clips(&clips, &provider))??;
    let mut cache = EmbeddingCache::new(backend.label(), provider.dim());
    for c in &clips {
        let key = c.cache_key();
        cache.put(&key, &vectors[&key])?;
    }
    let out = a.out.as_deref().expect("resolved");
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    cache.save(out)?;
    println!("{}", serde_json::json!({ "cache": out, "vectors": cache.len(), "dim": cache.dim() }));
    Ok(())
}

fn cmd_probe(a: &ProbeArgs, workers: Option<usize>) -> Result<()> {
    let registry = load_registry(&a.manifest)?;
    let ds = amalgamated(
        registry.get(&a.dataset).map_err(|e| CliError::config("--dataset", e.to_string()))?,
        a.min_class_size,
    );
    let spec = SplitSpec::new(a.k, a.seed);
    let split = split_train_test(&ds.clips, &spec).map_err(|e| CliError::config("--k", e.to_string()))?;
    let provider = Backend::parse(&a.backend, "--backend")?.provider(manifest_audio(&a.manifest), "--backend")?;
    let vectors = with_workers(workers, || embed_clips(&ds.clips, provider.as_ref()))??;
    let labeled = |clips: &[crate::corpus::LabeledClip]| -> Vec<LabeledEmbedding> {
        clips
            .iter()
            .map(|c| LabeledEmbedding {
                id: c.cache_key(),
                values: vectors[&c.cache_key()].clone(),
                class: c.class_name().to_owned(),
            })
            .collect()
    };
    let (train, test) = (labeled(&split.train), labeled(&split.test));
    let outcome = train_probe::<f32>(&train, &a.probe.hparams(), a.seed)?;
    let scored = score_examples(&outcome.model, &test)?;
    let auc = auc_roc_macro(&scored, &outcome.model.classes).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = &a.model_out {
        outcome.model.save(p)?;
    }
    let result = serde_json::json!({
        "model": provider.name(),
        "dataset": ds.id,
        "k": a.k,
        "seed": a.seed,
        "train": train.len(),
        "test": test.len(),
        "macro_auc": auc.mean,
        "per_class": auc.per_class.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
        "final_loss": outcome.epoch_losses.last(),
    });
    emit(a.out.as_deref(), format!("{}\n", serde_json::to_string_pretty(&result)?).as_bytes())
}

/// Evaluation sets and configuration of a `fewshot` run.
fn fewshot_setup(a: &FewshotArgs, workers: Option<usize>) -> Result<(Vec<Dataset>, FewshotConfig)> {
    let registry = load_registry(&a.manifest)?;
    let datasets = pick_datasets(&registry, a.datasets.as_deref(), "--datasets")?
        .into_iter()
        .map(|d| amalgamated(d, a.min_class_size))
        .collect();
    Ok((datasets, fewshot_config(&a.ks, a.repeats, a.seed, &a.probe, workers)?))
}

fn cmd_fewshot(a: &FewshotArgs, workers: Option<usize>) -> Result<()> {
    let (datasets, cfg) = fewshot_setup(a, workers)?;
    let provider = Backend::parse(&a.backend, "--backend")?.provider(manifest_audio(&a.manifest), "--backend")?;
    let mut report = EvalReport::default();
    for ds in &datasets {
        report.extend(crate::eval::fewshot_eval(ds, provider.as_ref(), &cfg)?);
    }
    write_records(&report, &class_columns(&datasets), a.out.as_deref())
}

fn cmd_dreg(a: &DregArgs, workers: Option<usize>) -> Result<()> {
    let registry = load_registry(&a.manifest)?;
    let cfg = a.finish(a.config(workers)?, &registry)?;
    let rotations = dreg(&registry, manifest_audio(&a.manifest), &cfg)?;
    let mut report = EvalReport::default();
    for r in &rotations {
        if let Some(rep) = &r.report {
            report.extend(rep.clone());
        }
    }
    let evaluated: Vec<Dataset> = registry.datasets().iter().map(|d| holdout_eval_set(d, &cfg)).collect();
    write_records(&report, &class_columns(&evaluated), a.out.as_deref())?;
    let summary: Vec<serde_json::Value> = rotations
        .iter()
        .map(|r| {
            serde_json::json!({
                "holdout": r.holdout,
                "training": r.training,
                "heads": r.heads.iter().map(|h| (&h.name, h.classes.len())).collect::<Vec<_>>(),
                "loss_start": r.loss_start,
                "loss_end": r.loss_end,
                "mean_auc": r.report.as_ref().and_then(|rep| mean_auc(rep)),
                "error": r.error,
            })
        })
        .collect();
    let text = serde_json::to_string_pretty(&summary)?;
    match &a.rotations_out {
        Some(p) => write_file(p, text.as_bytes())?,
        None => eprintln!("{text}"),
    }
    match rotations.iter().find_map(|r| r.error.as_ref().map(|e| (&r.holdout, e))) {
        Some((h, e)) => Err(CliError::Runtime(format!("rotation {h:?} failed: {e}"))),
        None => Ok(()),
    }
}

fn mean_auc(report: &EvalReport) -> Option<f64> {
    let aucs: Vec<f64> = report.records.iter().filter_map(|r| r.macro_auc).collect();
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn cmd_pretrain(a: &PretrainArgs, workers: Option<usize>) -> Result<()> {
    let registry = load_registry(&a.manifest)?;
    let base = match (&a.mixture, &a.datasets) {
        (Some(p), _) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| CliError::config("--mixture", e.to_string()))?,
        (None, Some(ids)) => {
            pick_datasets(&registry, Some(ids), "--datasets")?;
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            MixtureConfig::new(vec![SourceSpec::new("train", &refs, 1.0)])
        }
        (None, None) => MixtureConfig::uniform_over(&registry.dataset_ids(), "all"),
    };
    let mix = a.pretrain.apply(base)?;
    mix.validate().map_err(|e| CliError::config("--mixture", e.to_string()))?;
    let hp = a.pretrain.hparams()?;
    let audio = manifest_audio(&a.manifest);
    let heads = derive_heads(&registry, &mix)?;
    let (model, log) = with_workers(workers, || pretrain_toy(&mix, &heads, &hp, &registry, audio.as_ref(), a.seed))??;
    if let Some(parent) = a.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&a.out)?;
    let tenth = (log.losses.len() / 10).max(1);
    let n = log.losses.len();
    println!(
        "{}",
        serde_json::json!({
            "model": a.out,
            "steps": n,
            "heads": heads.iter().map(|h| (&h.name, h.classes.len())).collect::<Vec<_>>(),
            "loss_start": (n > 0).then(|| log.mean_loss(0..tenth)),
            "loss_end": (n > 0).then(|| log.mean_loss(n - tenth..n)),
            "mixup_mixed": log.mixed,
            "mixup_no_partner": log.no_partner,
        })
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, workers: Option<usize>) -> Result<()> {
    let registry = load_registry(&a.manifest)?;
    for (field, ids) in [("--reef", &a.reef), ("--bird", &a.bird), ("--freesound", &a.freesound), ("--validation", &a.validation)] {
        pick_datasets(&registry, Some(ids), field)?;
    }
    let refs = |v: &[String]| v.iter().map(String::clone).collect::<Vec<_>>();
    let training: Vec<String> = [refs(&a.reef), refs(&a.bird), refs(&a.freesound)].concat();
    let t: Vec<&str> = training.iter().map(String::as_str).collect();
    let v: Vec<&str> = a.validation.iter().map(String::as_str).collect();
    let stages = SweepSpec::preset(a.preset.key(), &t, &v).expect("every preset key is known");
    let needs = match a.preset {
        SweepPreset::Reefset => vec![],
        SweepPreset::ReefBird => vec![("--bird", &a.bird)],
        SweepPreset::ReefBirdFreesound => vec![("--bird", &a.bird), ("--freesound", &a.freesound)],
    };
    for (field, ids) in needs {
        if ids.is_empty() {
            return Err(CliError::config(field, format!("required by preset {}", a.preset.key())));
        }
    }
    let sources = SweepSources {
        reef: a.reef.clone(),
        bird: a.bird.clone(),
        freesound: a.freesound.clone(),
    };
    let fewshot = fewshot_config(&a.ks, a.repeats, a.seed, &a.probe, None)?;
    let base_mix = a.pretrain.apply(MixtureConfig::new(Vec::new()))?;
    let base_hp = a.pretrain.hparams()?;
    let audio = manifest_audio(&a.manifest);
    let table = with_workers(workers, || {
        sweep(&stages, &mut |spec, point| {
            sources.score(spec, point, &base_mix, &base_hp, &fewshot, &registry, audio.clone(), a.seed)
        })
    })??;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)?;
    if let Some(best) = table.best(table.rows.last().and_then(|r| r.stage)) {
        eprintln!("best: {}", serde_json::to_string(&best.config)?);
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let embedder = Backend::parse(&a.backend, "--backend")?.embedder("--backend")?;
    let cfg = BenchConfig {
        duration_s: a.duration_s,
        rate: a.rate,
        batch_grid: a.batch_grid.clone(),
        worker_grid: a.worker_grid.clone(),
        seed: a.seed,
    };
    if !(cfg.duration_s > 0.0) || cfg.batch_grid.contains(&0) || cfg.worker_grid.contains(&0) {
        return Err(CliError::config("--duration-s/--batch-grid/--worker-grid", "values must be positive"));
    }
    let result = bench_inference(embedder.as_ref(), &cfg)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)?;
    match &a.out {
        Some(_) => println!("{}", result.summary()),
        None => eprintln!("{}", result.summary()),
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut merged = EvalReport::default();
    for p in &a.inputs {
        merged.extend(load_report(p)?);
    }
    if let Some(p) = &a.merged {
        emit_report(&merged, p, ReportFormat::from_path(p).unwrap_or(ReportFormat::Csv))?;
    }
    let mut buf = Vec::new();
    merged.write_aggregates_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)
}

fn parse_cell(cell: &str) -> Result<(String, usize, usize)> {
    let bad = || CliError::config("--cell", format!("expected dataset,k,repeat, got {cell:?}"));
    let parts: Vec<&str> = cell.split(',').collect();
    let [ds, k, r] = parts.as_slice() else {
        return Err(bad());
    };
    Ok(((*ds).to_owned(), k.parse().map_err(|_| bad())?, r.parse().map_err(|_| bad())?))
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let config = RunConfig::load(&a.config)?;
    let mut command = config.command;
    let Some(cell) = &a.cell else {
        if let Some(out) = &a.out {
            command.set_out(absolute(out, "--out")?);
        }
        return dispatch(&command, config.workers);
    };
    let (dataset, k, repeat) = parse_cell(cell)?;
    let check = |ks: &[usize], repeats: usize| -> Result<()> {
        if !ks.contains(&k) || repeat >= repeats {
            return Err(CliError::config("--cell", format!("cell ({k}, {repeat}) is not part of the recorded run")));
        }
        Ok(())
    };
    let (record, classes) = match &command {
        Command::Fewshot(f) => {
            check(&f.ks, f.repeats)?;
            let (datasets, cfg) = fewshot_setup(f, config.workers)?;
            let ds = datasets
                .iter()
                .find(|d| d.id == dataset)
                .ok_or_else(|| CliError::config("--cell", format!("dataset {dataset:?} is not part of the run")))?;
            let provider =
                Backend::parse(&f.backend, "--backend")?.provider(manifest_audio(&f.manifest), "--backend")?;
            let vectors = with_workers(cfg.workers, || embed_clips(&ds.clips, provider.as_ref()))??;
            let record = fewshot_cell(ds, &vectors, provider.name(), k, repeat, &cfg);
            (record, class_columns(&datasets))
        }
        Command::Dreg(d) => {
            check(&d.ks, d.repeats)?;
            let registry = load_registry(&d.manifest)?;
            let cfg = d.finish(d.config(config.workers)?, &registry)?;
            registry.get(&dataset).map_err(|e| CliError::config("--cell", e.to_string()))?;
            let record = dreg_cell(&registry, manifest_audio(&d.manifest), &cfg, &dataset, k, repeat)?;
            let evaluated: Vec<Dataset> = registry.datasets().iter().map(|x| holdout_eval_set(x, &cfg)).collect();
            (record, class_columns(&evaluated))
        }
        other => {
            return Err(CliError::config(
                "--cell",
                format!("cell replay needs a fewshot or dreg run, not {}", other.name()),
            ))
        }
    };
    let out = a.out.as_deref();
    write_records(&EvalReport::new(vec![record]), &classes, out)
}
