//! Synthetic embedding worlds.
//!
//! An orthonormal basis of `R^d` is split into `fingerprint_slots` generator
//! directions and a semantic subspace spanning the rest. Concepts, caption
//! variation and hard-negative axes all live in the semantic subspace, so a
//! generator fingerprint is a direction no caption can explain.
//!
//! Generator `g` uses fingerprint slot `g`. Worlds built with the same seed and
//! slot count share every random draw regardless of the generator count, so an
//! `m = 1` world differs from its `m = 4` sibling only in which fingerprint
//! each image carries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use synthkit_core::caption::{CaptionRecord, DEFAULT_AXES};
use synthkit_core::{Embeddings, Error, PairedSample, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub concepts: usize,
    pub dim: usize,
    pub generators: usize,
    /// Fingerprint directions reserved in the basis; at least `generators`.
    pub fingerprint_slots: usize,
    /// Fingerprint strength.
    pub alpha: f64,
    /// Per-coordinate image noise.
    pub sigma: f64,
    /// Per-coordinate text noise.
    pub text_noise: f64,
    /// Spread of captions around their concept, as a norm.
    pub caption_spread: f64,
    /// Length of the hard-negative shift along its axis.
    pub hn_shift: f64,
    pub positives: usize,
    pub captions: usize,
    pub eval_captions: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            concepts: 64,
            dim: 32,
            generators: 4,
            fingerprint_slots: 4,
            alpha: 0.5,
            sigma: 0.2,
            text_noise: 0.05,
            caption_spread: 0.6,
            hn_shift: 0.6,
            positives: 4,
            captions: 200,
            eval_captions: 200,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.dim < 4 {
            return fail(format!("dim must be at least 4, got {}", self.dim));
        }
        if self.generators == 0 {
            return fail("need at least one generator".into());
        }
        if self.positives == 0 {
            return fail("need at least one image per caption".into());
        }
        if self.concepts == 0 || self.captions == 0 || self.eval_captions == 0 {
            return fail("concept and caption counts must be positive".into());
        }
        if self.fingerprint_slots < self.generators {
            return fail(format!(
                "{} generators need at least as many fingerprint slots, got {}",
                self.generators, self.fingerprint_slots
            ));
        }
        if self.fingerprint_slots + 2 > self.dim {
            return fail(format!(
                "{} fingerprint directions leave fewer than 2 semantic dimensions in d={}",
                self.fingerprint_slots, self.dim
            ));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("sigma", self.sigma),
            ("text_noise", self.text_noise),
            ("caption_spread", self.caption_spread),
            ("hn_shift", self.hn_shift),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn semantic_dim(&self) -> usize {
        self.dim - self.fingerprint_slots
    }
}

/// Train or eval portion of a world. Images of caption `i` occupy rows
/// `i·n⁺ .. (i+1)·n⁺`; image `j` of a caption comes from generator `j mod m`.
/// Hard negative `i` belongs to caption `i` and has one image.
#[derive(Debug, Clone)]
pub struct Split {
    pub text: Embeddings,
    pub images: Embeddings,
    pub image_caption: Vec<usize>,
    pub generators: Vec<usize>,
    pub hn_text: Embeddings,
    pub hn_images: Embeddings,
    pub hn_generators: Vec<usize>,
    pub concepts: Vec<usize>,
    pub axes: Vec<usize>,
    pub records: Vec<CaptionRecord>,
    pub samples: Vec<PairedSample>,
}

impl Split {
    pub fn captions(&self) -> usize {
        self.text.rows()
    }

    pub fn positives(&self) -> usize {
        self.images.rows() / self.text.rows()
    }

    pub fn image_row(&self, caption: usize, j: usize) -> usize {
        caption * self.positives() + j
    }

    pub fn caption_index(&self, id: &str) -> Option<usize> {
        let rest = id.strip_prefix("cap-")?;
        let rest = rest.strip_suffix("-hn").unwrap_or(rest);
        rest.parse().ok().filter(|&i: &usize| i < self.captions())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub fingerprints: Vec<Vec<f64>>,
    pub concept_vectors: Vec<Vec<f64>>,
    pub axis_vectors: Vec<Vec<f64>>,
    pub axis_names: Vec<String>,
    pub train: Split,
    pub eval: Split,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    normalize(&mut v);
    v
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn orthonormal_basis(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = gaussian(rng, d);
        // Two passes keep the basis orthogonal to rounding error.
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn combine(basis: &[Vec<f64>], coeffs: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (b, c) in basis.iter().zip(coeffs) {
        out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
    }
    out
}

fn add_scaled(a: &mut [f64], b: &[f64], s: f64) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
}

struct Basis<'a> {
    cfg: &'a WorldConfig,
    fingerprints: &'a [Vec<f64>],
    semantic: &'a [Vec<f64>],
    concepts: &'a [Vec<f64>],
    axes: &'a [Vec<f64>],
    axis_names: &'a [String],
}

fn build_split(b: &Basis<'_>, n_captions: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Split> {
    let cfg = b.cfg;
    let d = cfg.dim;
    let ds = cfg.semantic_dim();
    let spread = cfg.caption_spread / (ds as f64).sqrt();

    let mut text = Vec::with_capacity(n_captions);
    let mut images = Vec::with_capacity(n_captions * cfg.positives);
    let mut image_caption = Vec::with_capacity(n_captions * cfg.positives);
    let mut generators = Vec::with_capacity(n_captions * cfg.positives);
    let mut hn_text = Vec::with_capacity(n_captions);
    let mut hn_images = Vec::with_capacity(n_captions);
    let mut hn_generators = Vec::with_capacity(n_captions);
    let mut concepts = Vec::with_capacity(n_captions);
    let mut axes = Vec::with_capacity(n_captions);
    let mut records = Vec::with_capacity(2 * n_captions);
    let mut samples = Vec::with_capacity(n_captions);

    let image_of = |sem: &[f64], g: usize, rng: &mut ChaCha8Rng| {
        let mut x = sem.to_vec();
        add_scaled(&mut x, &b.fingerprints[g], cfg.alpha);
        let noise = gaussian(rng, d);
        add_scaled(&mut x, &noise, cfg.sigma);
        normalized(x)
    };
    let text_of = |sem: &[f64], noise: &[f64]| {
        let mut t = sem.to_vec();
        add_scaled(&mut t, noise, cfg.text_noise);
        normalized(t)
    };

    for i in 0..n_captions {
        let c = i % cfg.concepts;
        let a = i % b.axes.len();
        let mut sem = b.concepts[c].clone();
        let xi = gaussian(rng, ds);
        add_scaled(&mut sem, &combine(b.semantic, &xi, d), spread);
        let sem = normalized(sem);
        let mut shifted = sem.clone();
        add_scaled(&mut shifted, &b.axes[a], cfg.hn_shift);
        let neg = normalized(shifted.clone());

        // The hard negative reuses the caption's noise so the two differ only
        // along the axis.
        let text_noise = gaussian(rng, d);
        text.push(text_of(&sem, &text_noise));
        for j in 0..cfg.positives {
            let g = j % cfg.generators;
            images.push(image_of(&sem, g, rng));
            image_caption.push(i);
            generators.push(g);
        }
        hn_text.push(text_of(&shifted, &text_noise));
        let hg = i % cfg.generators;
        hn_images.push(image_of(&neg, hg, rng));
        hn_generators.push(hg);
        concepts.push(c);
        axes.push(a);

        let id = format!("{prefix}{i}");
        let concept = format!("concept{c}");
        let base = CaptionRecord::new(id.clone(), format!("{concept} caption {i}"), concept.clone())
            .with_axis(b.axis_names[a].clone());
        let negative = CaptionRecord::new(format!("{id}-hn"), format!("{concept} caption {i} shifted"), concept)
            .with_axis(b.axis_names[a].clone())
            .hard_negative_of(id);
        let rows = (i * cfg.positives..(i + 1) * cfg.positives).collect();
        samples.push(PairedSample::new(base.clone(), rows).with_negative(negative.clone(), Some(vec![i])));
        records.push(base);
        records.push(negative);
    }

    Ok(Split {
        text: Embeddings::from_rows(&text)?,
        images: Embeddings::from_rows(&images)?,
        image_caption,
        generators,
        hn_text: Embeddings::from_rows(&hn_text)?,
        hn_images: Embeddings::from_rows(&hn_images)?,
        hn_generators,
        concepts,
        axes,
        records,
        samples,
    })
}

/// Builds a world. Basis, train split and eval split come from independent
/// streams of one seeded generator.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let basis = orthonormal_basis(d, &mut rng);
    let (fingerprints, semantic) = basis.split_at(cfg.fingerprint_slots);
    let ds = semantic.len();

    let concept_vectors: Vec<Vec<f64>> =
        (0..cfg.concepts).map(|_| normalized(combine(semantic, &gaussian(&mut rng, ds), d))).collect();
    let axis_names: Vec<String> = DEFAULT_AXES.iter().map(|s| s.to_string()).collect();
    let axis_vectors: Vec<Vec<f64>> =
        axis_names.iter().map(|_| normalized(combine(semantic, &gaussian(&mut rng, ds), d))).collect();

    let b =
        Basis { cfg, fingerprints, semantic, concepts: &concept_vectors, axes: &axis_vectors, axis_names: &axis_names };
    let mut train_rng = rng.clone();
    train_rng.set_stream(1);
    let mut eval_rng = rng.clone();
    eval_rng.set_stream(2);
    let train = build_split(&b, cfg.captions, "cap-", &mut train_rng)?;
    let eval = build_split(&b, cfg.eval_captions, "cap-", &mut eval_rng)?;

    Ok(World {
        config: *cfg,
        fingerprints: fingerprints.to_vec(),
        concept_vectors,
        axis_vectors,
        axis_names,
        train,
        eval,
    })
}
