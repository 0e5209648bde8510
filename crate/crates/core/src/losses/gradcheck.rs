use serde::Serialize;

use super::{BatchTensors, LossKind};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Coordinates where both the analytic and the numerical derivative are below
/// this magnitude are reported as skipped: the loss is flat along them and a
/// relative error is meaningless.
pub const GRAD_SKIP_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: &'static str,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares the analytic gradient of `kind` against central differences
/// `(f(x+h) - f(x-h)) / 2h` on every input coordinate and on the temperature.
///
/// The perturbed inputs are evaluated without the unit-norm check, since a
/// step of `h` moves rows off the sphere.
pub fn check_gradients(kind: LossKind, b: &BatchTensors<f64>, h: f64) -> Result<GradCheckReport> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::invalid(format!("step must lie in (0, 1e-2], got {h}")));
    }
    let terms = kind.terms(b)?;
    let base = b.blocks();
    let analytic = base.evaluate(&terms);

    let mut report =
        GradCheckReport { loss: kind.name(), max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, skipped: 0 };
    let mut record = |a: f64, n: f64| {
        let scale = a.abs().max(n.abs());
        if scale < GRAD_SKIP_FLOOR {
            report.skipped += 1;
            return;
        }
        let err = (a - n).abs();
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(err);
        report.max_rel_error = report.max_rel_error.max(err / scale);
    };

    for slot in 0..4 {
        let Some(m) = &base.mats[slot] else { continue };
        let grad = analytic.grads[slot].as_ref().expect("gradient for present block");
        for idx in 0..m.as_slice().len() {
            let mut probe = base.clone();
            let x = m.as_slice()[idx];
            probe.mats[slot].as_mut().unwrap().as_mut_slice()[idx] = x + h;
            let up = probe.evaluate(&terms).value;
            probe.mats[slot].as_mut().unwrap().as_mut_slice()[idx] = x - h;
            let down = probe.evaluate(&terms).value;
            record(grad.as_slice()[idx], (up - down) / (2.0 * h));
        }
    }

    let mut probe = base.clone();
    probe.temperature = base.temperature + h;
    let up = probe.evaluate(&terms).value;
    probe.temperature = base.temperature - h;
    let down = probe.evaluate(&terms).value;
    record(analytic.d_temperature, (up - down) / (2.0 * h));

    Ok(report)
}

/// A random unit-norm batch shaped for `kind`: up to 8 captions in at most 8
/// dimensions, two images per caption for the grouped losses (so at most 16
/// image rows), hard-negative rows where the loss reads them.
pub fn seeded_batch(kind: LossKind, seed: u64) -> Result<BatchTensors<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let d = rng.random_range(3..=8);
    let tau = rng.random_range(0.2..1.0);
    let config = crate::caption::SimilarityConfig::new(tau)?;
    let mut unit = |rows: usize| -> Result<EmbeddingMatrix<f64>> {
        let data = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingMatrix::new(rows, d, data)?.normalize_rows()
    };
    match kind {
        LossKind::MultiPositive | LossKind::ImageToImage => {
            let group = (0..2 * n).map(|r| r / 2).collect();
            BatchTensors::grouped(unit(2 * n)?, unit(n)?, group, config)
        }
        LossKind::HnMixed => {
            let img = unit(n)?;
            let txt = unit(n)?;
            let h = 1 + (seed as usize % n);
            BatchTensors::paired(img, txt, config)?.with_hard_negatives(Some(unit(h)?), Some(unit(h)?))
        }
        _ => {
            let img = unit(n)?;
            let txt = unit(n)?;
            let hn_txt = unit(n)?;
            let hn_img = unit(n)?;
            BatchTensors::paired(img, txt, config)?.with_hard_negatives(Some(hn_txt), Some(hn_img))
        }
    }
}

/// Worst gradient check of every loss over `batches` seeded batches starting
/// at `seed`.
pub fn check_all(seed: u64, batches: usize, h: f64) -> Result<Vec<GradCheckReport>> {
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let mut worst: Option<GradCheckReport> = None;
            for k in 0..batches as u64 {
                let r = check_gradients(kind, &seeded_batch(kind, seed.wrapping_add(k))?, h)?;
                worst = Some(match worst {
                    None => r,
                    Some(mut w) => {
                        w.max_rel_error = w.max_rel_error.max(r.max_rel_error);
                        w.max_abs_error = w.max_abs_error.max(r.max_abs_error);
                        w.checked += r.checked;
                        w.skipped += r.skipped;
                        w
                    }
                });
            }
            worst.ok_or_else(|| Error::invalid("need at least one batch"))
        })
        .collect()
}
