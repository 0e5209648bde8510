use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use synthkit_core::caption::{pair_captions, read_captions, write_jsonl};
use synthkit_core::scheduler::utilization_report;
use synthkit_core::{CaptionRecord, CurriculumSchedule, CurriculumScheduler};

use super::{fmt, write_csv, write_json};
use crate::{CliResult, RunContext, Status};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScheduleArgs {
    /// Caption records (JSONL); hard negatives link to their base with `hn_of`.
    #[arg(long, conflicts_with = "samples")]
    pub captions: Option<PathBuf>,
    /// Simulate this many base captions, each with one hard negative.
    #[arg(long, required_unless_present = "captions")]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub p_start: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_end: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) fn synthetic_records(n: usize) -> Vec<CaptionRecord> {
    (0..n)
        .flat_map(|i| {
            let base = CaptionRecord::new(format!("s{i}"), format!("sample {i}"), "sample");
            let neg = CaptionRecord::new(format!("s{i}-hn"), format!("sample {i} altered"), "sample")
                .with_axis("color")
                .hard_negative_of(format!("s{i}"));
            [base, neg]
        })
        .collect()
}

pub fn run(a: &ScheduleArgs, ctx: &mut RunContext) -> CliResult<Status> {
    ctx.seed(a.seed);
    let records = match (&a.captions, a.samples) {
        (Some(path), _) => {
            ctx.input(path);
            read_captions(path)?
        }
        (None, Some(n)) => synthetic_records(n),
        (None, None) => unreachable!("clap requires one of --captions and --samples"),
    };
    let dataset = pair_captions(&records, 1)?;
    let schedule = CurriculumSchedule::new(a.epochs, a.p_start, a.p_end)?;
    let mut scheduler = CurriculumScheduler::new(schedule, a.batch_size, a.seed)?;
    let plans = scheduler.plan_all(&dataset)?;
    let report = utilization_report(&plans, &dataset, &scheduler.schedule, scheduler.queue());

    if let Some(p) = ctx.output("plans.jsonl") {
        let flat: Vec<_> = plans.iter().flatten().collect();
        write_jsonl(&p, &flat)?;
    }
    if let Some(p) = ctx.output("utilization.json") {
        write_json(&p, &report)?;
    }
    if let Some(p) = ctx.output("realized_p.csv") {
        let rows = report.epochs.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                fmt(e.p),
                fmt(e.realized_p),
                e.batches.to_string(),
                e.positives.to_string(),
                e.hn_consumed.to_string(),
                e.hn_from_queue.to_string(),
            ]
        });
        let header = ["epoch", "scheduled_p", "realized_p", "batches", "positives", "hn_consumed", "hn_from_queue"];
        write_csv(&p, &header, rows)?;
    }
    println!(
        "{} samples, {} epochs: {} hard negatives batched, {} left queued, {} exactly-once violations",
        dataset.len(),
        a.epochs,
        report.total_hn_consumed(),
        report.queue_depth,
        report.violations.len()
    );
    Ok(Status::Ok)
}
