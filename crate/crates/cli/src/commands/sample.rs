use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use synthkit_core::caption::{read_captions, write_captions, write_jsonl, DEFAULT_AXES};
use synthkit_core::sampler::{
    balanced_sample, count_concepts, deduplicate, render_prompt, sample_control_tuple, ConceptBank, SamplerConfig,
    DEFAULT_THRESHOLD,
};
use synthkit_core::AxisSet;

use super::write_csv;
use crate::{CliError, CliResult, RunContext, Status};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Caption records (JSONL).
    #[arg(long)]
    pub captions: PathBuf,
    /// Concept bank, one concept per line (optionally `concept<TAB>weight`).
    #[arg(long)]
    pub bank: PathBuf,
    /// Per-concept count above which captions are subsampled.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep exact-text duplicates instead of dropping them first.
    #[arg(long)]
    pub keep_duplicates: bool,
    /// Keep at most this many sampled captions, in input order.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Directory of prompt templates, one `*.txt` file per template.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Control tuples rendered per template.
    #[arg(long, default_value_t = 10)]
    pub tuples: usize,
    /// Axes drawn for control tuples, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_AXES.map(String::from))]
    pub axes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Prompt<'a> {
    template: &'a str,
    index: usize,
    concept: String,
    axis: String,
    base_id: Option<&'a str>,
    prompt: String,
}

fn template_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "txt") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::invalid(format!("no *.txt templates in {}", dir.display())));
    }
    Ok(files)
}

pub fn run(a: &SampleArgs, ctx: &mut RunContext) -> CliResult<Status> {
    ctx.input(&a.captions);
    ctx.input(&a.bank);
    ctx.seed(a.seed);
    let bank = ConceptBank::load(&a.bank)?;
    let mut captions = read_captions(&a.captions)?;
    let total = captions.len();
    if !a.keep_duplicates {
        captions = deduplicate(&captions);
    }
    let before = count_concepts(&captions, &bank);
    let mut sampled = balanced_sample(&captions, &before, &SamplerConfig::new(a.threshold, a.seed)?)?;
    if let Some(limit) = a.limit {
        sampled.truncate(limit);
    }
    let after = count_concepts(&sampled, &bank);

    if let Some(p) = ctx.output("sampled.jsonl") {
        write_captions(&p, &sampled)?;
    }
    if let Some(p) = ctx.output("concept_counts.csv") {
        let rows = (0..before.concepts.len())
            .map(|i| vec![before.concepts[i].clone(), before.counts[i].to_string(), after.counts[i].to_string()]);
        write_csv(&p, &["concept", "before", "after"], rows)?;
    }
    println!("kept {} of {} captions ({} after deduplication)", sampled.len(), total, captions.len());

    if let Some(dir) = &a.templates {
        let axes = AxisSet::new(a.axes.iter().cloned())?;
        let files = template_files(dir)?;
        let mut texts = Vec::with_capacity(files.len());
        for f in &files {
            ctx.input(f);
            let t = fs::read_to_string(f).map_err(|e| CliError::io(f, e))?;
            let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            texts.push((name, t.trim_end().to_owned()));
        }
        let mut prompts = Vec::new();
        let mut k = 0u64;
        for (name, template) in &texts {
            for index in 0..a.tuples {
                // One independent stream per rendered prompt.
                let (concept, axis) = sample_control_tuple(&bank, &axes, a.seed.wrapping_add(k))?;
                let base = (!sampled.is_empty()).then(|| &sampled[k as usize % sampled.len()]);
                let prompt = render_prompt(template, &concept, &axis, base.map(|b| b.text.as_str()))
                    .map_err(|e| CliError::invalid(format!("template {name}: {e}")))?;
                prompts.push(Prompt {
                    template: name,
                    index,
                    concept,
                    axis,
                    base_id: base.map(|b| b.id.as_str()),
                    prompt,
                });
                k += 1;
            }
        }
        if let Some(p) = ctx.output("prompts.jsonl") {
            write_jsonl(&p, &prompts)?;
        }
        println!("rendered {} prompts from {} templates", prompts.len(), texts.len());
    }
    Ok(Status::Ok)
}
