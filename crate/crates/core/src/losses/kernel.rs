//! Softmax cross-entropy over blocks of embedding rows.
//!
//! Every objective in this crate is a weighted sum of [`Term`]s. A term takes
//! the rows of one or more anchor blocks, scores them against the rows of one
//! or more candidate blocks (`logit = dot / τ`) and charges
//! `LSE(logits) - Σ_j p_j logit_j` per anchor, averaged over anchors. The
//! gradient of that expression with respect to a logit is `q_j - p_j`, which
//! the kernel pushes back onto both the anchor and the candidate rows and onto
//! the temperature.

use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Img = 0,
    Txt = 1,
    HnTxt = 2,
    HnImg = 3,
}

#[derive(Debug, Clone)]
pub(crate) enum Targets {
    /// Anchor k of the concatenated anchors matches candidate k of the
    /// concatenated candidates.
    Diagonal,
    /// Explicit sparse target distribution per anchor.
    Soft(Vec<Vec<(usize, f64)>>),
}

#[derive(Debug, Clone)]
pub(crate) struct Term {
    pub anchors: Vec<Slot>,
    pub candidates: Vec<Slot>,
    pub targets: Targets,
    /// Drop candidate i from anchor i's softmax (anchors and candidates must
    /// be the same blocks).
    pub exclude_self: bool,
    pub weight: f64,
}

impl Term {
    pub fn diagonal(anchors: &[Slot], candidates: &[Slot], weight: f64) -> Self {
        Term {
            anchors: anchors.to_vec(),
            candidates: candidates.to_vec(),
            targets: Targets::Diagonal,
            exclude_self: false,
            weight,
        }
    }
}

/// The four input blocks in double precision. Absent blocks are `None`.
#[derive(Debug, Clone)]
pub(crate) struct Blocks {
    pub mats: [Option<Matrix<f64>>; 4],
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluated {
    pub value: f64,
    pub grads: [Option<Matrix<f64>>; 4],
    pub d_temperature: f64,
}

impl Blocks {
    fn block(&self, s: Slot) -> &Matrix<f64> {
        self.mats[s as usize].as_ref().expect("term references a present block")
    }

    fn gather(&self, slots: &[Slot]) -> Vec<(Slot, usize)> {
        slots.iter().flat_map(|&s| (0..self.block(s).rows()).map(move |r| (s, r))).collect()
    }

    fn row(&self, at: (Slot, usize)) -> &[f64] {
        self.block(at.0).row(at.1)
    }

    pub fn evaluate(&self, terms: &[Term]) -> Evaluated {
        let mut grads: [Option<Matrix<f64>>; 4] = Default::default();
        for (g, m) in grads.iter_mut().zip(&self.mats) {
            *g = m.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols()));
        }
        let tau = self.temperature;
        let mut value = 0.0;
        let mut d_tau = 0.0;
        let mut logits = Vec::new();
        let mut probs = Vec::new();
        let mut target = Vec::new();

        for term in terms {
            let anchors = self.gather(&term.anchors);
            let cands = self.gather(&term.candidates);
            if anchors.is_empty() || term.weight == 0.0 {
                continue;
            }
            let scale = term.weight / anchors.len() as f64;
            for (i, &a) in anchors.iter().enumerate() {
                let arow = self.row(a);
                logits.clear();
                logits.extend(cands.iter().map(|&c| dot(arow, self.row(c)) / tau));
                target.clear();
                target.resize(cands.len(), 0.0);
                match &term.targets {
                    Targets::Diagonal => target[i] = 1.0,
                    Targets::Soft(t) => {
                        for &(j, w) in &t[i] {
                            target[j] += w;
                        }
                    }
                }
                let skip = term.exclude_self.then_some(i);
                let max = logits
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| Some(*j) != skip)
                    .map(|(_, &z)| z)
                    .fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 =
                    logits.iter().enumerate().filter(|(j, _)| Some(*j) != skip).map(|(_, &z)| (z - max).exp()).sum();
                let lse = max + sum.ln();
                probs.clear();
                probs.extend(
                    logits.iter().enumerate().map(|(j, &z)| if Some(j) == skip { 0.0 } else { (z - lse).exp() }),
                );
                let expected: f64 = target.iter().zip(&logits).map(|(p, z)| p * z).sum();
                value += scale * (lse - expected);

                for (j, &c) in cands.iter().enumerate() {
                    let g = scale * (probs[j] - target[j]);
                    if g == 0.0 {
                        continue;
                    }
                    d_tau -= g * logits[j] / tau;
                    add_scaled(grads[a.0 as usize].as_mut().unwrap().row_mut(a.1), self.row(c), g / tau);
                    add_scaled(grads[c.0 as usize].as_mut().unwrap().row_mut(c.1), arow, g / tau);
                }
            }
        }
        Evaluated { value, grads, d_temperature: d_tau }
    }
}

fn add_scaled(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// `log Σ exp(v)` computed stably.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn single_candidate_costs_nothing() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let blocks = Blocks { mats: [Some(m.clone()), Some(m), None, None], temperature: 1.0 };
        let out = blocks.evaluate(&[Term::diagonal(&[Slot::Img], &[Slot::Txt], 1.0)]);
        assert_eq!(out.value, 0.0);
        assert_eq!(out.grads[0].as_ref().unwrap().max_abs(), 0.0);
    }
}
