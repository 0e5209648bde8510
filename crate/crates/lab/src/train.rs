//! Toy dual-encoder training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use synthkit_core::losses::{BatchTensors, LossKind};
use synthkit_core::scheduler::{schedule_p, BatchPlan};
use synthkit_core::{CurriculumSchedule, CurriculumScheduler, Error, Result, SimilarityConfig};

use crate::encoder::{learning_rate, Adam, EncoderGrad, ToyEncoder};
use crate::eval::{eval_retrieval, hn_discrimination, RetrievalScores};
use crate::probe::probe_accuracy;
use crate::world::{Split, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Multi-positive loss over all images of each caption, plus an optional
    /// weighted image-to-image term.
    MultiPositive { i2i_weight: f64 },
    /// Mixed hard-negative loss on curriculum batches with one image per caption.
    HardNegative { p_start: f64, p_end: f64 },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::MultiPositive { i2i_weight } if *i2i_weight > 0.0 => "multi_positive+i2i",
            Objective::MultiPositive { .. } => "multi_positive",
            Objective::HardNegative { .. } => "hn_mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    /// Captions per batch for the multi-positive objective, items
    /// (captions plus hard negatives) per batch for the hard-negative one.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub temperature: f64,
    pub learn_temperature: bool,
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::MultiPositive { i2i_weight: 1.0 },
            epochs: 60,
            batch_size: 50,
            learning_rate: 0.01,
            warmup_epochs: 1,
            temperature: 0.1,
            learn_temperature: true,
            init_jitter: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Generator probe on image features; absent for single-generator splits.
    pub probe_accuracy: Option<f64>,
    pub retrieval: RetrievalScores,
    pub hn_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective: String,
    pub epochs: usize,
    pub steps: usize,
    /// Reference objective on fixed training batches before any update.
    pub initial_loss: f64,
    /// Same reference objective after each epoch.
    pub epoch_loss: Vec<f64>,
    pub final_loss: f64,
    pub temperature: Vec<f64>,
    /// Learning rate of the last step of each epoch.
    pub learning_rate: Vec<f64>,
    pub scheduled_hn_ratio: Vec<f64>,
    pub realized_hn_ratio: Vec<f64>,
    pub queue_depth: usize,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: ToyEncoder,
    pub report: TrainReport,
}

/// Rows of one step. `group[k]` is the position in `captions` of image `images[k]`;
/// `hn[k]` is the caption whose hard negative fills slot `k`.
#[derive(Debug, Clone)]
struct BatchSpec {
    captions: Vec<usize>,
    images: Vec<usize>,
    group: Vec<usize>,
    hn: Vec<usize>,
}

impl BatchSpec {
    fn items(&self) -> usize {
        self.captions.len() + self.hn.len()
    }
}

fn validate(world: &World, cfg: &TrainConfig) -> Result<()> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("need at least one epoch"));
    }
    if cfg.batch_size < 2 {
        return Err(Error::invalid(format!("batch size must be at least 2, got {}", cfg.batch_size)));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", cfg.learning_rate)));
    }
    match cfg.objective {
        Objective::MultiPositive { i2i_weight } => {
            if !(i2i_weight.is_finite() && i2i_weight >= 0.0) {
                return Err(Error::invalid(format!("i2i weight must be finite and >= 0, got {i2i_weight}")));
            }
            if i2i_weight > 0.0 && world.config.positives < 2 {
                return Err(Error::invalid("the image-to-image term needs at least two images per caption"));
            }
        }
        Objective::HardNegative { p_start, p_end } => {
            CurriculumSchedule::new(cfg.epochs, p_start, p_end)?;
            if world.train.samples.iter().any(|s| s.negative.is_none()) {
                return Err(Error::invalid("hard-negative training needs a hard negative for every caption"));
            }
        }
    }
    Ok(())
}

fn mp_batch(split: &Split, captions: &[usize]) -> BatchSpec {
    let n_pos = split.positives();
    let mut images = Vec::with_capacity(captions.len() * n_pos);
    let mut group = Vec::with_capacity(captions.len() * n_pos);
    for (k, &c) in captions.iter().enumerate() {
        for j in 0..n_pos {
            images.push(split.image_row(c, j));
            group.push(k);
        }
    }
    BatchSpec { captions: captions.to_vec(), images, group, hn: Vec::new() }
}

fn hn_batch(split: &Split, plan: &BatchPlan, image_slot: usize) -> Result<BatchSpec> {
    let lookup =
        |id: &String| split.caption_index(id).ok_or_else(|| Error::invalid(format!("plan references unknown id {id}")));
    let captions = plan.positive_ids.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let hn = plan.hn_ids.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let j = image_slot % split.positives();
    let images = captions.iter().map(|&c| split.image_row(c, j)).collect();
    let group = (0..captions.len()).collect();
    Ok(BatchSpec { captions, images, group, hn })
}

fn reference_batches(split: &Split, cfg: &TrainConfig) -> Vec<BatchSpec> {
    let all: Vec<usize> = (0..split.captions()).collect();
    match cfg.objective {
        Objective::MultiPositive { .. } => all.chunks(cfg.batch_size).map(|c| mp_batch(split, c)).collect(),
        Objective::HardNegative { .. } => all
            .chunks((cfg.batch_size / 2).max(1))
            .map(|c| BatchSpec {
                captions: c.to_vec(),
                images: c.iter().map(|&i| split.image_row(i, 0)).collect(),
                group: (0..c.len()).collect(),
                hn: c.to_vec(),
            })
            .collect(),
    }
}

/// Loss and parameter gradient of one batch.
fn step(enc: &ToyEncoder, split: &Split, b: &BatchSpec, objective: &Objective) -> Result<(f64, EncoderGrad)> {
    let img_cache = enc.image.forward(&split.images.select(&b.images)?)?;
    let txt_cache = enc.text.forward(&split.text.select(&b.captions)?)?;
    let sim = SimilarityConfig::new(enc.temperature())?;
    let mut grad = EncoderGrad::zeros(enc);

    let value = match *objective {
        Objective::MultiPositive { i2i_weight } => {
            let batch =
                BatchTensors::grouped(img_cache.output().clone(), txt_cache.output().clone(), b.group.clone(), sim)?;
            let mp = LossKind::MultiPositive.evaluate(&batch)?;
            let mut img_g = mp.gradients.img;
            let mut d_tau = mp.gradients.temperature;
            let mut value = mp.value;
            if i2i_weight > 0.0 {
                let i2i = LossKind::ImageToImage.evaluate(&batch)?;
                value += i2i_weight * i2i.value;
                d_tau += i2i_weight * i2i.gradients.temperature;
                img_g
                    .as_mut_slice()
                    .iter_mut()
                    .zip(i2i.gradients.img.as_slice())
                    .for_each(|(a, b)| *a += i2i_weight * b);
            }
            enc.image.backward(&img_cache, &img_g, &mut grad.image);
            enc.text.backward(&txt_cache, &mp.gradients.txt, &mut grad.text);
            grad.log_temperature = d_tau * enc.temperature();
            value
        }
        Objective::HardNegative { .. } => {
            let (hn_txt_cache, hn_img_cache) = if b.hn.is_empty() {
                (None, None)
            } else {
                (
                    Some(enc.text.forward(&split.hn_text.select(&b.hn)?)?),
                    Some(enc.image.forward(&split.hn_images.select(&b.hn)?)?),
                )
            };
            let batch = BatchTensors::paired(img_cache.output().clone(), txt_cache.output().clone(), sim)?
                .with_hard_negatives(
                    hn_txt_cache.as_ref().map(|c| c.output().clone()),
                    hn_img_cache.as_ref().map(|c| c.output().clone()),
                )?;
            let lv = LossKind::HnMixed.evaluate(&batch)?;
            let g = lv.gradients;
            enc.image.backward(&img_cache, &g.img, &mut grad.image);
            enc.text.backward(&txt_cache, &g.txt, &mut grad.text);
            if let (Some(c), Some(gm)) = (&hn_txt_cache, &g.hn_txt) {
                enc.text.backward(c, gm, &mut grad.text);
            }
            if let (Some(c), Some(gm)) = (&hn_img_cache, &g.hn_img) {
                enc.image.backward(c, gm, &mut grad.image);
            }
            grad.log_temperature = g.temperature * enc.temperature();
            lv.value
        }
    };
    Ok((value, grad))
}

fn reference_loss(enc: &ToyEncoder, split: &Split, batches: &[BatchSpec], objective: &Objective) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        total += step(enc, split, b, objective)?.0;
    }
    Ok(total / batches.len() as f64)
}

/// Encodes `split` and measures probe, retrieval and hard-negative scores.
pub fn evaluate(enc: &ToyEncoder, split: &Split, probe_seed: u64) -> Result<Evaluation> {
    let img = enc.image.encode(&split.images)?;
    let txt = enc.text.encode(&split.text)?;
    let hn_txt = enc.text.encode(&split.hn_text)?;
    let distinct = split.generators.iter().any(|&g| g != split.generators[0]);
    let probe = if distinct { Some(probe_accuracy(&img, &split.generators, probe_seed)?) } else { None };
    let n_pos = split.positives();
    let paired: Vec<usize> = (0..split.captions()).map(|i| split.image_row(i, i % n_pos)).collect();
    Ok(Evaluation {
        probe_accuracy: probe,
        retrieval: eval_retrieval(&img.select(&paired)?, &txt)?,
        hn_accuracy: hn_discrimination(&img, &split.image_caption, &txt, &hn_txt)?,
    })
}

/// Generator-probe accuracy of `enc`'s image features on `split`.
pub fn probe_split(enc: &ToyEncoder, split: &Split, probe_seed: u64) -> Result<f64> {
    probe_accuracy(&enc.image.encode(&split.images)?, &split.generators, probe_seed)
}

/// Probe accuracy of a split's raw image embeddings.
pub fn raw_probe(split: &Split, probe_seed: u64) -> Result<f64> {
    probe_accuracy(&split.images, &split.generators, probe_seed)
}

/// Trains a fresh encoder on `world.train` and evaluates it on `world.eval`.
pub fn train_toy(world: &World, cfg: &TrainConfig) -> Result<TrainOutcome> {
    validate(world, cfg)?;
    let split = &world.train;
    let mut enc = ToyEncoder::new(world.config.dim, cfg.temperature, cfg.init_jitter, cfg.seed)?;
    let reference = reference_batches(split, cfg);
    let initial_loss = reference_loss(&enc, split, &reference, &cfg.objective)?;

    let (epoch_batches, scheduled, queue_depth) = match cfg.objective {
        Objective::MultiPositive { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1);
            let mut order: Vec<usize> = (0..split.captions()).collect();
            let epochs: Vec<Vec<BatchSpec>> = (0..cfg.epochs)
                .map(|_| {
                    order.shuffle(&mut rng);
                    order.chunks(cfg.batch_size).map(|c| mp_batch(split, c)).collect()
                })
                .collect();
            (epochs, vec![0.0; cfg.epochs], 0)
        }
        Objective::HardNegative { p_start, p_end } => {
            let sched = CurriculumSchedule::new(cfg.epochs, p_start, p_end)?;
            let mut scheduler = CurriculumScheduler::new(sched, cfg.batch_size, cfg.seed)?;
            let plans = scheduler.plan_all(&split.samples)?;
            let mut epochs = Vec::with_capacity(plans.len());
            for (e, batches) in plans.iter().enumerate() {
                let specs = batches.iter().map(|p| hn_batch(split, p, e + p.step)).collect::<Result<Vec<_>>>()?;
                epochs.push(specs);
            }
            let scheduled = (0..cfg.epochs).map(|e| schedule_p(&sched, e)).collect::<Result<Vec<_>>>()?;
            (epochs, scheduled, scheduler.queue().len())
        }
    };

    let total_steps: usize = epoch_batches.iter().map(Vec::len).sum();
    let warmup: usize = epoch_batches.iter().take(cfg.warmup_epochs).map(Vec::len).sum();
    let mut opt = Adam::new(enc.parameter_count());
    let mut global = 0;
    let mut report = TrainReport {
        objective: cfg.objective.name().to_owned(),
        epochs: cfg.epochs,
        steps: total_steps,
        initial_loss,
        epoch_loss: Vec::with_capacity(cfg.epochs),
        final_loss: initial_loss,
        temperature: Vec::with_capacity(cfg.epochs),
        learning_rate: Vec::with_capacity(cfg.epochs),
        scheduled_hn_ratio: scheduled,
        realized_hn_ratio: Vec::with_capacity(cfg.epochs),
        queue_depth,
        evaluation: evaluate(&enc, &world.eval, cfg.seed)?,
    };

    for batches in &epoch_batches {
        let mut lr = 0.0;
        let (mut hn_items, mut items) = (0usize, 0usize);
        for b in batches {
            let (_, mut grad) = step(&enc, split, b, &cfg.objective)?;
            if !cfg.learn_temperature {
                grad.log_temperature = 0.0;
            }
            lr = learning_rate(cfg.learning_rate, global, warmup, total_steps);
            opt.apply(&mut enc, &grad, lr);
            if !enc.is_finite() {
                return Err(Error::invalid(format!("training diverged at step {global}")));
            }
            global += 1;
            hn_items += b.hn.len();
            items += b.items();
        }
        report.epoch_loss.push(reference_loss(&enc, split, &reference, &cfg.objective)?);
        report.temperature.push(enc.temperature());
        report.learning_rate.push(lr);
        report.realized_hn_ratio.push(if items == 0 { 0.0 } else { hn_items as f64 / items as f64 });
    }
    report.final_loss = *report.epoch_loss.last().expect("at least one epoch");
    report.evaluation = evaluate(&enc, &world.eval, cfg.seed)?;
    Ok(TrainOutcome { encoder: enc, report })
}

/// Finite-difference check of the encoder gradient for one reference batch.
pub fn check_encoder_gradient(world: &World, cfg: &TrainConfig, h: f64) -> Result<f64> {
    validate(world, cfg)?;
    let enc = ToyEncoder::new(world.config.dim, cfg.temperature, cfg.init_jitter.max(0.2), cfg.seed)?;
    let mut batch = reference_batches(&world.train, cfg).swap_remove(0);
    if let Objective::HardNegative { .. } = cfg.objective {
        batch.hn.truncate(batch.captions.len() / 2);
    }
    let (_, grad) = step(&enc, &world.train, &batch, &cfg.objective)?;
    let mut worst: f64 = 0.0;
    let value = |e: &ToyEncoder| step(e, &world.train, &batch, &cfg.objective).map(|v| v.0);
    let mut compare = |analytic: f64, up: f64, down: f64| {
        let num = (up - down) / (2.0 * h);
        let scale = analytic.abs().max(num.abs());
        if scale > 1e-7 {
            worst = worst.max((analytic - num).abs() / scale);
        }
    };
    for k in (0..enc.image.weights.len()).step_by(7) {
        let (mut a, mut b) = (enc.clone(), enc.clone());
        a.image.weights[k] += h;
        b.image.weights[k] -= h;
        compare(grad.image[k], value(&a)?, value(&b)?);
        let (mut a, mut b) = (enc.clone(), enc.clone());
        a.text.weights[k] += h;
        b.text.weights[k] -= h;
        compare(grad.text[k], value(&a)?, value(&b)?);
    }
    let (mut a, mut b) = (enc.clone(), enc.clone());
    a.log_temperature += h;
    b.log_temperature -= h;
    compare(grad.log_temperature, value(&a)?, value(&b)?);
    Ok(worst)
}
