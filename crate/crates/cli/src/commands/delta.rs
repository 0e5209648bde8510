use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use synthkit_core::metrics::{delta_mtl, MetricVector};

use super::{read_csv, write_json};
use crate::{CliError, CliResult, RunContext, Status};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DeltaArgs {
    /// Baseline metrics, CSV rows `name,value[,lower_is_better]`.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Model metrics in the same format and order.
    #[arg(long)]
    pub model: PathBuf,
    /// Also write delta.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" | "higher" => Some(false),
        "1" | "true" | "yes" | "lower" => Some(true),
        _ => None,
    }
}

pub fn read_metrics(path: &Path) -> CliResult<MetricVector> {
    let (mut names, mut values, mut lower) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in read_csv(path, "name")?.into_iter().enumerate() {
        let bad = |what: &str| CliError::invalid(format!("{} row {}: {what}", path.display(), i + 1));
        if !(2..=3).contains(&row.len()) {
            return Err(bad("expected name,value[,lower_is_better]"));
        }
        let v: f64 = row[1].parse().map_err(|_| bad(&format!("bad value {:?}", row[1])))?;
        let l = parse_flag(row.get(2).map_or("", String::as_str)).ok_or_else(|| bad("bad lower_is_better flag"))?;
        names.push(row[0].clone());
        values.push(v);
        lower.push(l);
    }
    Ok(MetricVector::new(names, values, lower)?)
}

#[derive(Debug, Serialize)]
struct Term {
    name: String,
    baseline: f64,
    model: f64,
    lower_is_better: bool,
    relative_change_pct: f64,
}

pub fn run(a: &DeltaArgs, ctx: &mut RunContext) -> CliResult<Status> {
    ctx.input(&a.baseline);
    ctx.input(&a.model);
    let base = read_metrics(&a.baseline)?;
    let model = read_metrics(&a.model)?;
    let delta = delta_mtl(&model, &base)?;
    println!("{delta:+.1}");
    if let Some(p) = ctx.output("delta.json") {
        let terms: Vec<Term> = (0..base.names.len())
            .map(|i| {
                let rel = 100.0 * (model.values[i] - base.values[i]) / base.values[i];
                Term {
                    name: base.names[i].clone(),
                    baseline: base.values[i],
                    model: model.values[i],
                    lower_is_better: base.lower_is_better[i],
                    relative_change_pct: if base.lower_is_better[i] { -rel } else { rel },
                }
            })
            .collect();
        write_json(&p, &serde_json::json!({ "delta_mtl": delta, "terms": terms }))?;
    }
    Ok(Status::Ok)
}
