use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use synthkit_core::losses::check_all;

use super::write_json;
use crate::{CliResult, RunContext, Status};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Seeded batches per loss.
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    /// Central-difference step h.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Also write gradcheck.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Row {
    loss: &'static str,
    max_rel_error: f64,
    max_abs_error: f64,
    checked: usize,
    skipped: usize,
    pass: bool,
}

pub fn run(a: &CheckArgs, ctx: &mut RunContext) -> CliResult<Status> {
    ctx.seed(a.seed);
    let reports = check_all(a.seed, a.batches, a.step)?;
    let rows: Vec<Row> = reports
        .iter()
        .map(|r| Row {
            loss: r.loss,
            max_rel_error: r.max_rel_error,
            max_abs_error: r.max_abs_error,
            checked: r.checked,
            skipped: r.skipped,
            pass: r.max_rel_error < a.tolerance,
        })
        .collect();
    for r in &rows {
        println!(
            "{:<16} max rel error {:.3e}  ({} coordinates, {} below floor)  {}",
            r.loss,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(p) = ctx.output("gradcheck.json") {
        write_json(&p, &rows)?;
    }
    Ok(if rows.iter().all(|r| r.pass) { Status::Ok } else { Status::Failed })
}
