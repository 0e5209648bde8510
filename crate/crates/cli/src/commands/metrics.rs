use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use synthkit_core::caption::read_captions;
use synthkit_core::emb1::{load_embeddings, LoadMode};
use synthkit_core::metrics::{
    diversity, kmeans_fit, recognizability, DEFAULT_CLIPSCORE_SCALE, DEFAULT_CLUSTERS, DEFAULT_MAX_ITERS,
};

use super::{fmt, write_csv, write_json};
use crate::{CliError, CliResult, RunContext, Status};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MetricsArgs {
    /// Image embeddings (EMB1). Images of caption i occupy rows i*n+ .. (i+1)*n+.
    #[arg(long)]
    pub images: PathBuf,
    /// Caption embeddings (EMB1), one row per caption.
    #[arg(long)]
    pub text: PathBuf,
    /// Caption records (JSONL) row-aligned with --text.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Images per caption; inferred from the row counts when omitted.
    #[arg(long)]
    pub positives: Option<usize>,
    /// k-means clusters over caption embeddings.
    #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// CLIPScore scale w.
    #[arg(long, default_value_t = DEFAULT_CLIPSCORE_SCALE)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    images: usize,
    captions: usize,
    positives: usize,
    clusters: usize,
    seed: u64,
    scale: f64,
    recognizability: f64,
    diversity: f64,
    /// Clusters holding at least one image (K').
    nonempty_clusters: usize,
    /// Captions per cluster.
    cluster_captions: Vec<usize>,
    /// Images per cluster.
    cluster_sizes: Vec<usize>,
    kmeans_iterations: usize,
    kmeans_inertia: f64,
}

pub fn run(a: &MetricsArgs, ctx: &mut RunContext) -> CliResult<Status> {
    ctx.input(&a.images);
    ctx.input(&a.text);
    ctx.seed(a.seed);
    // Rows are normalized on load; the metrics assume unit-norm embeddings.
    let imgs = load_embeddings(&a.images, LoadMode::Normalized)?.cast::<f64>();
    let txt = load_embeddings(&a.text, LoadMode::Normalized)?.cast::<f64>();
    if let Some(path) = &a.captions {
        ctx.input(path);
        let records = read_captions(path)?;
        if records.len() != txt.rows() {
            return Err(CliError::invalid(format!(
                "{} caption records for {} caption embeddings",
                records.len(),
                txt.rows()
            )));
        }
        if let Some(ids) = txt.ids() {
            if let Some(i) = (0..ids.len()).find(|&i| ids[i] != records[i].id) {
                return Err(CliError::invalid(format!(
                    "caption row {i}: embedding id {:?} but record id {:?}",
                    ids[i], records[i].id
                )));
            }
        }
    }
    let n = txt.rows();
    let positives = match a.positives {
        Some(p) => p,
        None if n > 0 && imgs.rows() % n == 0 => imgs.rows() / n,
        None => {
            return Err(CliError::invalid(format!(
                "{} images do not split evenly over {n} captions; pass --positives",
                imgs.rows()
            )))
        }
    };
    if positives == 0 || imgs.rows() != n * positives {
        return Err(CliError::invalid(format!("{} images != {n} captions x {positives} positives", imgs.rows())));
    }
    let img_to_caption: Vec<usize> = (0..imgs.rows()).map(|i| i / positives).collect();
    let paired_text = txt.select(&img_to_caption)?;
    let r = recognizability(&imgs, &paired_text, a.scale)?;
    let model = kmeans_fit(&txt, a.clusters, a.seed, a.max_iters)?;
    let d = diversity(&imgs, &model, &img_to_caption)?;

    let report = MetricsReport {
        images: imgs.rows(),
        captions: n,
        positives,
        clusters: a.clusters,
        seed: a.seed,
        scale: a.scale,
        recognizability: r,
        diversity: d.diversity,
        nonempty_clusters: d.nonempty_clusters,
        cluster_captions: model.cluster_sizes(),
        cluster_sizes: d.cluster_sizes.clone(),
        kmeans_iterations: model.iterations,
        kmeans_inertia: model.inertia(),
    };
    if let Some(p) = ctx.output("metrics.json") {
        write_json(&p, &report)?;
    }
    if let Some(p) = ctx.output("cluster_std.csv") {
        let rows = (0..model.k).map(|k| {
            vec![
                k.to_string(),
                report.cluster_captions[k].to_string(),
                d.cluster_sizes[k].to_string(),
                d.cluster_std[k].map(fmt).unwrap_or_default(),
            ]
        });
        write_csv(&p, &["cluster", "captions", "images", "std"], rows)?;
    }
    println!("recognizability {:.4}", r);
    println!("diversity       {:.6} over {} of {} clusters", d.diversity, d.nonempty_clusters, model.k);
    Ok(Status::Ok)
}
