use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use synthkit_core::caption::CONCEPT_AXIS;
use synthkit_core::metrics::{classification_report, majority_vote, ClassificationReport};

use super::{fmt, read_csv, write_csv, write_json};
use crate::{CliError, CliResult, RunContext, Status};

/// Broad candidate set before pruning.
pub const CANDIDATE_AXES: [&str; 10] =
    ["background", "color", "lighting", "material", "perspective", "position", "size", "style", "texture", "concept"];

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AxesArgs {
    /// True axis per hard negative, CSV rows `id,axis`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Predicted axes of one classifier, CSV rows `id,axis`; repeat for a voting ensemble.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Label set, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = CANDIDATE_AXES.map(String::from))]
    pub axes: Vec<String>,
    /// Drop axes whose majority-vote F1 is below this; `concept` is always kept.
    #[arg(long)]
    pub min_f1: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct AxesReport {
    items: usize,
    voters: Vec<VoterReport>,
    majority: ClassificationReport,
    min_f1: Option<f64>,
    final_axes: Vec<String>,
    pruned: Vec<String>,
}

#[derive(Debug, Serialize)]
struct VoterReport {
    file: String,
    report: ClassificationReport,
}

fn read_labels(path: &Path) -> CliResult<Vec<(String, String)>> {
    read_csv(path, "id")?
        .into_iter()
        .enumerate()
        .map(|(i, row)| match row.as_slice() {
            [id, axis] => Ok((id.clone(), axis.clone())),
            _ => Err(CliError::invalid(format!("{} row {}: expected id,axis", path.display(), i + 1))),
        })
        .collect()
}

/// Predictions of one voter in truth order.
fn align(path: &Path, ids: &[String]) -> CliResult<Vec<String>> {
    let mut by_id = HashMap::new();
    for (id, axis) in read_labels(path)? {
        if by_id.insert(id.clone(), axis).is_some() {
            return Err(CliError::invalid(format!("{}: id {id:?} appears twice", path.display())));
        }
    }
    ids.iter()
        .map(|id| {
            by_id.remove(id).ok_or_else(|| CliError::invalid(format!("{}: no prediction for {id:?}", path.display())))
        })
        .collect()
}

pub fn run(a: &AxesArgs, ctx: &mut RunContext) -> CliResult<Status> {
    ctx.input(&a.truth);
    let truth = read_labels(&a.truth)?;
    if truth.is_empty() {
        return Err(CliError::invalid(format!("{} holds no labels", a.truth.display())));
    }
    let ids: Vec<String> = truth.iter().map(|t| t.0.clone()).collect();
    let labels: Vec<String> = truth.into_iter().map(|t| t.1).collect();
    let mut classes: Vec<String> = Vec::new();
    for c in &a.axes {
        if !classes.contains(c) {
            classes.push(c.clone());
        }
    }

    let mut predictions = Vec::with_capacity(a.pred.len());
    let mut voters = Vec::with_capacity(a.pred.len());
    for path in &a.pred {
        ctx.input(path);
        let p = align(path, &ids)?;
        let report = classification_report(&p, &labels, &classes)?;
        voters.push(VoterReport { file: path.display().to_string(), report });
        predictions.push(p);
    }
    let voted = majority_vote(&predictions)?;
    let majority = classification_report(&voted, &labels, &classes)?;

    let keep = |i: usize| classes[i] == CONCEPT_AXIS || a.min_f1.is_none_or(|t| majority.f1[i] >= t);
    let final_axes: Vec<String> = (0..classes.len()).filter(|&i| keep(i)).map(|i| classes[i].clone()).collect();
    let pruned: Vec<String> = (0..classes.len()).filter(|&i| !keep(i)).map(|i| classes[i].clone()).collect();

    for v in &voters {
        println!("{:<32} accuracy {:.3}  macro F1 {:.3}", v.file, v.report.accuracy, v.report.macro_f1);
    }
    println!("{:<32} accuracy {:.3}  macro F1 {:.3}", "majority vote", majority.accuracy, majority.macro_f1);
    if !pruned.is_empty() {
        println!("pruned: {}", pruned.join(", "));
    }

    if let Some(p) = ctx.output("confusion.csv") {
        let mut header = vec!["true\\predicted"];
        header.extend(classes.iter().map(String::as_str));
        let rows = (0..classes.len()).map(|t| {
            let mut row = vec![classes[t].clone()];
            row.extend(majority.confusion[t].iter().map(usize::to_string));
            row
        });
        write_csv(&p, &header, rows)?;
    }
    if let Some(p) = ctx.output("per_axis.csv") {
        let rows = (0..classes.len()).map(|i| {
            vec![
                classes[i].clone(),
                majority.support[i].to_string(),
                fmt(majority.precision[i]),
                fmt(majority.recall[i]),
                fmt(majority.f1[i]),
                keep(i).to_string(),
            ]
        });
        write_csv(&p, &["axis", "support", "precision", "recall", "f1", "kept"], rows)?;
    }
    if let Some(p) = ctx.output("final_axes.json") {
        write_json(&p, &final_axes)?;
    }
    let report = AxesReport { items: ids.len(), voters, majority, min_f1: a.min_f1, final_axes, pruned };
    if let Some(p) = ctx.output("report.json") {
        write_json(&p, &report)?;
    }
    Ok(Status::Ok)
}
