use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_CLUSTERS: usize = 1000;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub seed: u64,
    /// Lloyd iterations actually run.
    pub iterations: usize,
    /// Inertia after initialization and after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least the initial inertia")
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lowest index wins ties.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(data: &Matrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.rows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![data.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                target -= d;
                if target < 0.0 {
                    break;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // Every point coincides with a centroid: take unused rows in order.
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        let c = data.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(data: &Matrix<f64>, centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    (0..data.rows()).into_par_iter().map(|i| nearest(centroids, data.row(i))).collect()
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops after `max_iters` or when inertia changes by less than
/// `RELATIVE_TOLERANCE` relative to its previous value. A cluster that loses all
/// its points is re-seeded with the point farthest from its current centroid.
pub fn kmeans_fit<T: Scalar>(x: &EmbeddingMatrix<T>, k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k={k} exceeds {n} points")));
    }
    if max_iters == 0 {
        return Err(Error::invalid("need at least one iteration"));
    }
    let data = x.cast::<f64>().matrix().clone();
    let d = data.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&data, k, &mut rng);

    let mut nearest_all = assign(&data, &centroids);
    let mut history = vec![nearest_all.iter().map(|p| p.1).sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &(a, _)) in nearest_all.iter().enumerate() {
            counts[a] += 1;
            sums[a].iter_mut().zip(data.row(i)).for_each(|(s, v)| *s += v);
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| nearest_all[a].1.total_cmp(&nearest_all[b].1).then(b.cmp(&a)))
                .expect("k <= n");
            taken[far] = true;
            nearest_all[far].1 = 0.0;
            centroids[c] = data.row(far).to_vec();
        }
        nearest_all = assign(&data, &centroids);
        let inertia: f64 = nearest_all.iter().map(|p| p.1).sum();
        let prev = *history.last().unwrap();
        history.push(inertia);
        if (prev - inertia).abs() <= RELATIVE_TOLERANCE * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        assignment: nearest_all.into_iter().map(|p| p.0).collect(),
        seed,
        iterations,
        inertia_history: history,
    })
}
