//! Dataset and evaluation metrics.

mod kmeans;

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, EmbeddingMatrix, Matrix, NORM_TOLERANCE};
use crate::scalar::Scalar;

pub use kmeans::{kmeans_fit, ClusterModel, DEFAULT_CLUSTERS, DEFAULT_MAX_ITERS, RELATIVE_TOLERANCE};

pub const DEFAULT_CLIPSCORE_SCALE: f64 = 100.0;

/// `w·max(cos, 0)` for unit-norm rows.
pub fn clipscore<T: Scalar>(img: &[T], txt: &[T], w: f64) -> Result<f64> {
    if img.len() != txt.len() {
        return Err(Error::DimensionMismatch(format!("dim {} vs {}", img.len(), txt.len())));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::invalid(format!("scale must be positive, got {w}")));
    }
    for (row, v) in [img, txt].into_iter().enumerate() {
        let norm = l2_norm(v).as_f64();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    Ok(w * dot(img, txt).as_f64().max(0.0))
}

/// Mean CLIPScore over row-aligned pairs.
pub fn recognizability<T: Scalar>(imgs: &EmbeddingMatrix<T>, txts: &EmbeddingMatrix<T>, w: f64) -> Result<f64> {
    if imgs.rows() != txts.rows() {
        return Err(Error::DimensionMismatch(format!("{} images vs {} captions", imgs.rows(), txts.rows())));
    }
    if imgs.dim() != txts.dim() {
        return Err(Error::DimensionMismatch(format!("dim {} vs {}", imgs.dim(), txts.dim())));
    }
    imgs.require_normalized()?;
    txts.require_normalized()?;
    let mut sum = 0.0;
    for i in 0..imgs.rows() {
        sum += clipscore(imgs.row(i), txts.row(i), w)?;
    }
    Ok(sum / imgs.rows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub diversity: f64,
    /// Clusters holding at least one image.
    pub nonempty_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    /// Per-cluster spread, `None` for clusters without images.
    pub cluster_std: Vec<Option<f64>>,
}

/// Average over non-empty clusters of the root mean squared distance of each
/// image embedding to its cluster's image mean. Images reach a cluster
/// through `img_to_caption` and the caption assignment of `model`.
pub fn diversity<T: Scalar>(
    imgs: &EmbeddingMatrix<T>,
    model: &ClusterModel,
    img_to_caption: &[usize],
) -> Result<DiversityReport> {
    if img_to_caption.len() != imgs.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} image mappings for {} images",
            img_to_caption.len(),
            imgs.rows()
        )));
    }
    let d = imgs.dim();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.k];
    for (i, &c) in img_to_caption.iter().enumerate() {
        let cluster =
            *model.assignment.get(c).ok_or_else(|| Error::invalid(format!("image {i} maps to unknown caption {c}")))?;
        members[cluster].push(i);
    }
    let mut cluster_std = Vec::with_capacity(model.k);
    for m in &members {
        if m.is_empty() {
            cluster_std.push(None);
            continue;
        }
        let mut mu = vec![0.0; d];
        for &i in m {
            mu.iter_mut().zip(imgs.row(i)).for_each(|(s, v)| *s += v.as_f64());
        }
        mu.iter_mut().for_each(|s| *s /= m.len() as f64);
        let ss: f64 =
            m.iter().map(|&i| imgs.row(i).iter().zip(&mu).map(|(v, c)| (v.as_f64() - c).powi(2)).sum::<f64>()).sum();
        cluster_std.push(Some((ss / m.len() as f64).sqrt()));
    }
    let present: Vec<f64> = cluster_std.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Empty("images"));
    }
    Ok(DiversityReport {
        diversity: present.iter().sum::<f64>() / present.len() as f64,
        nonempty_clusters: present.len(),
        cluster_sizes: members.iter().map(Vec::len).collect(),
        cluster_std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub lower_is_better: Vec<bool>,
}

impl MetricVector {
    pub fn new(names: Vec<String>, values: Vec<f64>, lower_is_better: Vec<bool>) -> Result<Self> {
        if names.len() != values.len() || names.len() != lower_is_better.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names, {} values, {} orientations",
                names.len(),
                values.len(),
                lower_is_better.len()
            )));
        }
        if names.is_empty() {
            return Err(Error::Empty("metric vector"));
        }
        Ok(Self { names, values, lower_is_better })
    }

    /// Unnamed higher-is-better metrics.
    pub fn higher_better(values: &[f64]) -> Self {
        Self {
            names: (0..values.len()).map(|i| format!("m{i}")).collect(),
            values: values.to_vec(),
            lower_is_better: vec![false; values.len()],
        }
    }
}

/// Mean signed relative change against `baseline`, in percent. Lower-is-better
/// metrics contribute with flipped sign.
pub fn delta_mtl(model: &MetricVector, baseline: &MetricVector) -> Result<f64> {
    if model.names != baseline.names || model.lower_is_better != baseline.lower_is_better {
        return Err(Error::DimensionMismatch("model and baseline metrics are not aligned".into()));
    }
    if model.values.is_empty() {
        return Err(Error::Empty("metric vector"));
    }
    let mut acc = 0.0;
    for i in 0..model.values.len() {
        let b = baseline.values[i];
        if b == 0.0 {
            return Err(Error::invalid(format!("baseline metric {} is zero", baseline.names[i])));
        }
        let rel = (model.values[i] - b) / b;
        acc += if model.lower_is_better[i] { -rel } else { rel };
    }
    Ok(100.0 * acc / model.values.len() as f64)
}

/// Per-item modal label. Among tied labels the one cast by the earliest voter wins.
pub fn majority_vote<L: Clone + Eq + Hash>(predictions: &[Vec<L>]) -> Result<Vec<L>> {
    let first = predictions.first().ok_or(Error::Empty("voters"))?;
    if let Some(bad) = predictions.iter().position(|p| p.len() != first.len()) {
        return Err(Error::DimensionMismatch(format!(
            "voter {bad} has {} predictions, voter 0 has {}",
            predictions[bad].len(),
            first.len()
        )));
    }
    let mut out = Vec::with_capacity(first.len());
    for item in 0..first.len() {
        let mut counts: HashMap<&L, usize> = HashMap::new();
        for p in predictions {
            *counts.entry(&p[item]).or_default() += 1;
        }
        let top = counts.values().copied().max().unwrap_or(0);
        let winner = predictions.iter().map(|p| &p[item]).find(|l| counts[l] == top).unwrap();
        out.push(winner.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    /// `confusion[t][p]`: items of true class `t` predicted as `p`.
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion matrix and macro scores. Undefined ratios (no predictions or no
/// support for a class) count as 0.
pub fn classification_report<S: AsRef<str>>(
    pred: &[S],
    truth: &[S],
    classes: &[String],
) -> Result<ClassificationReport> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if classes.is_empty() {
        return Err(Error::Empty("classes"));
    }
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let lookup =
        |l: &S| index.get(l.as_ref()).copied().ok_or_else(|| Error::invalid(format!("unknown label {:?}", l.as_ref())));
    let c = classes.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (p, t) in pred.iter().zip(truth) {
        confusion[lookup(t)?][lookup(p)?] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<usize> = (0..c).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
    let precision: Vec<f64> = (0..c).map(|i| ratio(confusion[i][i], predicted[i])).collect();
    let recall: Vec<f64> = (0..c).map(|i| ratio(confusion[i][i], support[i])).collect();
    let f1: Vec<f64> =
        precision.iter().zip(&recall).map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }).collect();
    let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / c as f64;
    Ok(ClassificationReport {
        classes: classes.to_vec(),
        accuracy: ratio(trace, pred.len()),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        confusion,
        support,
        precision,
        recall,
        f1,
    })
}

/// Fraction of rows `i` whose match, column `i`, is among the top `k` columns.
/// Columns tied with the match do not push it down.
pub fn recall_at_k<T: Scalar>(sim: &Matrix<T>, k: usize) -> Result<f64> {
    let (rows, cols) = (sim.rows(), sim.cols());
    if rows == 0 {
        return Err(Error::Empty("similarity matrix"));
    }
    if rows > cols {
        return Err(Error::DimensionMismatch(format!("{rows} queries but only {cols} candidates")));
    }
    if k < 1 || k > cols {
        return Err(Error::invalid(format!("k must lie in [1, {cols}], got {k}")));
    }
    let hits = (0..rows)
        .filter(|&i| {
            let row = sim.row(i);
            let target = row[i];
            row.iter().filter(|&&v| v > target).count() < k
        })
        .count();
    Ok(hits as f64 / rows as f64)
}
