//! `synthkit` command line.
//!
//! Every subcommand reads plain files, writes CSV/JSON/JSONL outputs into
//! `--out`, and leaves a `manifest.json` there that `synthkit replay` can
//! rerun. Exit codes: 0 success, 1 validation or usage error, 2 I/O error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub mod commands;
pub mod manifest;

use commands::{axes, delta, losses, metrics, sample, schedule, spectra, train};
pub use manifest::{replay, FileDigest, ReplayArgs, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] synthkit_core::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "synthkit", version, about = "Curation, metrics and toy training for synthetic image-text data")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads for data-parallel stages. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Recognizability and diversity of an embedded image-caption set.
    Metrics(metrics::MetricsArgs),
    /// Concept-balanced caption sampling and prompt rendering.
    Sample(sample::SampleArgs),
    /// Simulate the hard-negative curriculum scheduler.
    ScheduleSim(schedule::ScheduleArgs),
    /// Radial frequency profiles and high-frequency energy of image sets.
    Spectra(spectra::SpectraArgs),
    /// Train a toy dual encoder on a synthetic world.
    TrainToy(train::TrainArgs),
    /// Compare analytic loss gradients with central differences.
    CheckLosses(losses::CheckArgs),
    /// Mean relative change of a model's metrics against a baseline.
    DeltaMtl(delta::DeltaArgs),
    /// Score axis classifiers against labels and prune unreliable axes.
    ReportAxes(axes::AxesArgs),
    /// Rerun a recorded run and compare its outputs byte for byte.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Metrics(_) => "metrics",
            Command::Sample(_) => "sample",
            Command::ScheduleSim(_) => "schedule-sim",
            Command::Spectra(_) => "spectra",
            Command::TrainToy(_) => "train-toy",
            Command::CheckLosses(_) => "check-losses",
            Command::DeltaMtl(_) => "delta-mtl",
            Command::ReportAxes(_) => "report-axes",
            Command::Replay(_) => "replay",
        }
    }

    /// Output directory, if the run has one.
    pub fn out_dir(&self) -> Option<&Path> {
        match self {
            Command::Metrics(a) => Some(&a.out),
            Command::Sample(a) => Some(&a.out),
            Command::ScheduleSim(a) => Some(&a.out),
            Command::Spectra(a) => Some(&a.out),
            Command::TrainToy(a) => Some(&a.out),
            Command::CheckLosses(a) => a.out.as_deref(),
            Command::DeltaMtl(a) => a.out.as_deref(),
            Command::ReportAxes(a) => Some(&a.out),
            Command::Replay(a) => Some(&a.out),
        }
    }

    pub(crate) fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Command::Metrics(a) => a.out = dir,
            Command::Sample(a) => a.out = dir,
            Command::ScheduleSim(a) => a.out = dir,
            Command::Spectra(a) => a.out = dir,
            Command::TrainToy(a) => a.out = dir,
            Command::CheckLosses(a) => a.out = Some(dir),
            Command::DeltaMtl(a) => a.out = Some(dir),
            Command::ReportAxes(a) => a.out = dir,
            Command::Replay(a) => a.out = dir,
        }
    }

    /// Makes every path absolute so a manifest replays from any directory.
    fn resolve_paths(&mut self) -> CliResult<()> {
        let mut paths: Vec<&mut PathBuf> = Vec::new();
        match self {
            Command::Metrics(a) => {
                paths.extend([&mut a.images, &mut a.text, &mut a.out]);
                paths.extend(a.captions.as_mut());
            }
            Command::Sample(a) => {
                paths.extend([&mut a.captions, &mut a.bank, &mut a.out]);
                paths.extend(a.templates.as_mut());
            }
            Command::ScheduleSim(a) => {
                paths.push(&mut a.out);
                paths.extend(a.captions.as_mut());
            }
            Command::Spectra(a) => {
                paths.push(&mut a.out);
                paths.extend(a.sets.iter_mut());
            }
            Command::TrainToy(a) => paths.push(&mut a.out),
            Command::CheckLosses(a) => paths.extend(a.out.as_mut()),
            Command::DeltaMtl(a) => {
                paths.extend([&mut a.baseline, &mut a.model]);
                paths.extend(a.out.as_mut());
            }
            Command::ReportAxes(a) => {
                paths.extend([&mut a.truth, &mut a.out]);
                paths.extend(a.pred.iter_mut());
            }
            Command::Replay(a) => paths.extend([&mut a.manifest, &mut a.out]),
        }
        for p in paths {
            *p = std::path::absolute(&*p).map_err(|e| CliError::io(p.clone(), e))?;
        }
        Ok(())
    }
}

/// Files and seeds a run touched, filled in by the subcommand.
#[derive(Debug, Default)]
pub struct RunContext {
    out: Option<PathBuf>,
    pub(crate) inputs: Vec<PathBuf>,
    pub(crate) outputs: Vec<String>,
    pub(crate) seeds: Vec<u64>,
}

impl RunContext {
    fn new(out: Option<&Path>) -> Self {
        RunContext { out: out.map(Path::to_path_buf), ..Default::default() }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    /// Registers `name` as an output and returns where to write it, or `None`
    /// when the run has no output directory.
    pub fn output(&mut self, name: &str) -> Option<PathBuf> {
        let dir = self.out.as_ref()?;
        self.outputs.push(name.to_owned());
        Some(dir.join(name))
    }
}

/// Whether a finished run met its own pass criterion (`check-losses`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

fn thread_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    if threads == 0 {
        return Err(CliError::invalid("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::invalid(format!("cannot start {threads} threads: {e}")))
}

/// Runs one subcommand and writes its manifest. Returns the manifest when the
/// run has an output directory.
pub fn execute(command: &Command, threads: usize) -> CliResult<(Status, Option<RunManifest>)> {
    let started = std::time::Instant::now();
    let mut ctx = RunContext::new(command.out_dir());
    if let Some(dir) = command.out_dir() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let pool = thread_pool(threads)?;
    let status = pool.install(|| match command {
        Command::Metrics(a) => metrics::run(a, &mut ctx),
        Command::Sample(a) => sample::run(a, &mut ctx),
        Command::ScheduleSim(a) => schedule::run(a, &mut ctx),
        Command::Spectra(a) => spectra::run(a, &mut ctx),
        Command::TrainToy(a) => train::run(a, &mut ctx),
        Command::CheckLosses(a) => losses::run(a, &mut ctx),
        Command::DeltaMtl(a) => delta::run(a, &mut ctx),
        Command::ReportAxes(a) => axes::run(a, &mut ctx),
        Command::Replay(_) => Err(CliError::invalid("replay cannot be nested")),
    })?;
    let manifest = match command.out_dir() {
        Some(dir) => {
            let m = RunManifest::build(command, threads, &ctx, started.elapsed().as_secs_f64())?;
            m.save(&dir.join(manifest::MANIFEST_FILE))?;
            Some(m)
        }
        None => None,
    };
    Ok((status, manifest))
}

fn dispatch(mut cli: Cli) -> CliResult<Status> {
    cli.command.resolve_paths()?;
    match &cli.command {
        Command::Replay(a) => replay(a),
        command => execute(command, cli.threads).map(|(s, _)| s),
    }
}

/// Parses `argv` (program name first) and runs it, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(Status::Ok) => 0,
        Ok(Status::Failed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
