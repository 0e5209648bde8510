//! Linear generator probe.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use synthkit_core::{Embeddings, Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7, iterations: 300, learning_rate: 0.5, l2: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub test_size: usize,
    pub classes: usize,
}

struct Softmax {
    classes: usize,
    dim: usize,
    /// `classes × (dim + 1)`, bias last.
    w: Vec<f64>,
}

impl Softmax {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.w[k * (self.dim + 1)..(k + 1) * (self.dim + 1)];
                row[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[self.dim]
            })
            .collect()
    }

    fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        (0..self.classes).fold(0, |best, k| if z[k] > z[best] { k } else { best })
    }
}

fn accuracy(model: &Softmax, x: &[Vec<f64>], y: &[usize]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().zip(y).filter(|(xi, &yi)| model.predict(xi) == yi).count() as f64 / x.len() as f64
}

/// Multinomial logistic regression trained by full-batch gradient descent on a
/// seeded `train_fraction` split; accuracy is measured on the remainder.
pub fn probe_generator<T: Scalar>(
    features: &synthkit_core::EmbeddingMatrix<T>,
    labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut present = vec![false; classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("probe needs at least two distinct labels"));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must lie in (0, 1), got {}", cfg.train_fraction)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
    let rows = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            idx.iter().map(|&i| features.row(i).iter().map(|v| v.as_f64()).collect()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (xtr, ytr) = rows(&order[..n_train]);
    let (xte, yte) = rows(&order[n_train..]);

    let dim = features.dim();
    let mut model = Softmax { classes, dim, w: vec![0.0; classes * (dim + 1)] };
    let mut grad = vec![0.0; model.w.len()];
    for _ in 0..cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in xtr.iter().zip(&ytr) {
            let z = model.logits(x);
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..classes {
                let coef = e[k] / s - if k == y { 1.0 } else { 0.0 };
                let row = &mut grad[k * (dim + 1)..(k + 1) * (dim + 1)];
                row[..dim].iter_mut().zip(x).for_each(|(g, v)| *g += coef * v);
                row[dim] += coef;
            }
        }
        let inv = 1.0 / xtr.len() as f64;
        for (k, (w, g)) in model.w.iter_mut().zip(&grad).enumerate() {
            let decay = if k % (dim + 1) == dim { 0.0 } else { cfg.l2 * *w };
            *w -= cfg.learning_rate * (g * inv + decay);
        }
    }
    Ok(ProbeResult {
        accuracy: accuracy(&model, &xte, &yte),
        train_accuracy: accuracy(&model, &xtr, &ytr),
        test_size: xte.len(),
        classes,
    })
}

/// Probe accuracy with default settings and the given split seed.
pub fn probe_accuracy(features: &Embeddings, labels: &[usize], seed: u64) -> Result<f64> {
    Ok(probe_generator(features, labels, &ProbeConfig { seed, ..Default::default() })?.accuracy)
}
