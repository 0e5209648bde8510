//! Run manifests and replay.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{execute, CliError, CliResult, Command, RunContext, Status};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: String) -> CliResult<Self> {
        Ok(FileDigest { path: label, sha256: sha256_file(path)? })
    }
}

/// Everything needed to rerun a subcommand. `command` holds the fully
/// resolved flags with absolute paths; output paths are relative to the
/// output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub command: Command,
    pub threads: usize,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub(crate) fn build(command: &Command, threads: usize, ctx: &RunContext, seconds: f64) -> CliResult<Self> {
        let out = command.out_dir().ok_or_else(|| CliError::invalid("run has no output directory"))?;
        let inputs = ctx.inputs.iter().map(|p| FileDigest::of(p, p.display().to_string())).collect::<CliResult<_>>()?;
        let outputs =
            ctx.outputs.iter().map(|name| FileDigest::of(&out.join(name), name.clone())).collect::<CliResult<_>>()?;
        Ok(RunManifest {
            subcommand: command.name().to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.clone(),
            threads,
            seeds: ctx.seeds.clone(),
            inputs,
            outputs,
            wall_clock_seconds: seconds,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh directory for the rerun; must differ from the recorded one.
    #[arg(long)]
    pub out: PathBuf,
}

/// Reruns the recorded command into `args.out` and compares every output
/// digest. Inputs must still hash as recorded.
pub fn replay(args: &ReplayArgs) -> CliResult<Status> {
    let recorded = RunManifest::load(&args.manifest)?;
    if recorded.command.out_dir() == Some(args.out.as_path()) {
        return Err(CliError::invalid("replay output directory must differ from the recorded one"));
    }
    for input in &recorded.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::invalid(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let mut command = recorded.command.clone();
    command.set_out_dir(args.out.clone());
    let (_, fresh) = execute(&command, recorded.threads)?;
    let fresh = fresh.expect("replayed runs have an output directory");

    let mut identical = recorded.outputs.len() == fresh.outputs.len();
    for old in &recorded.outputs {
        let verdict = match fresh.outputs.iter().find(|f| f.path == old.path) {
            Some(f) if f.sha256 == old.sha256 => "identical",
            Some(_) => {
                identical = false;
                "differs"
            }
            None => {
                identical = false;
                "missing"
            }
        };
        println!("{verdict:<9} {}", old.path);
    }
    for f in fresh.outputs.iter().filter(|f| !recorded.outputs.iter().any(|o| o.path == f.path)) {
        println!("{:<9} {}", "new", f.path);
    }
    if identical {
        println!("replay of {} reproduced {} outputs", recorded.subcommand, recorded.outputs.len());
        Ok(Status::Ok)
    } else {
        println!("replay of {} diverged", recorded.subcommand);
        Ok(Status::Failed)
    }
}
