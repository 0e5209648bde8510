//! Paired runs comparing training setups on matched worlds.

use serde::{Deserialize, Serialize};
use synthkit_core::Result;

use crate::train::{probe_split, raw_probe, train_toy, Objective, TrainConfig, TrainReport};
use crate::world::{generate_world, WorldConfig};

/// Training used for the invariance comparison: the default multi-positive
/// objective with unit image-to-image weight.
pub fn invariance_train_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, ..Default::default() }
}

/// Training used for the curriculum comparison. Queue-first filling leaves
/// most hard-negative slots unpaired until the ratio nears 0.5, so the run is
/// long enough for paired exposure to land before the learning rate has
/// decayed away.
pub fn curriculum_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        objective: Objective::HardNegative { p_start: 0.0, p_end: 0.5 },
        epochs: 300,
        learning_rate: 0.2,
        seed,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceOutcome {
    pub seed: u64,
    /// Probe on the raw images of the multi-generator world.
    pub probe_raw: f64,
    /// Probe after training on the multi-generator world.
    pub probe_multi: f64,
    /// Probe on the multi-generator world after training on its single-generator twin.
    pub probe_single: f64,
    pub recall_multi: f64,
    pub recall_single: f64,
    pub multi: TrainReport,
    pub single: TrainReport,
}

impl InvarianceOutcome {
    pub fn probe_drops(&self) -> bool {
        self.probe_multi < self.probe_single
    }

    /// Recall@1 loss against the single-generator run, in percentage points.
    pub fn recall_cost_pp(&self) -> f64 {
        100.0 * (self.recall_single - self.recall_multi)
    }
}

/// Trains the same objective on `world` and on its one-generator twin (same
/// seed, so identical semantics and noise) and probes both encoders on the
/// multi-generator eval split.
pub fn invariance_experiment(world: &WorldConfig, train: &TrainConfig) -> Result<InvarianceOutcome> {
    let multi_world = generate_world(world)?;
    let single_world = generate_world(&WorldConfig { generators: 1, ..*world })?;
    let multi = train_toy(&multi_world, train)?;
    let single = train_toy(&single_world, train)?;
    Ok(InvarianceOutcome {
        seed: world.seed,
        probe_raw: raw_probe(&multi_world.eval, train.seed)?,
        probe_multi: probe_split(&multi.encoder, &multi_world.eval, train.seed)?,
        probe_single: probe_split(&single.encoder, &multi_world.eval, train.seed)?,
        recall_multi: multi.report.evaluation.retrieval.recall_at_1,
        recall_single: single.report.evaluation.retrieval.recall_at_1,
        multi: multi.report,
        single: single.report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumOutcome {
    pub seed: u64,
    pub hn_accuracy_raw: f64,
    pub hn_accuracy_curriculum: f64,
    pub hn_accuracy_none: f64,
    pub curriculum: TrainReport,
    pub none: TrainReport,
}

impl CurriculumOutcome {
    pub fn curriculum_helps(&self) -> bool {
        self.hn_accuracy_curriculum > self.hn_accuracy_none
    }
}

/// Hard-negative training as configured in `train` against the same run with
/// the ratio pinned at zero.
pub fn curriculum_experiment(world: &WorldConfig, train: &TrainConfig) -> Result<CurriculumOutcome> {
    if !matches!(train.objective, Objective::HardNegative { .. }) {
        return Err(synthkit_core::Error::invalid("curriculum comparison needs a hard-negative objective"));
    }
    let w = generate_world(world)?;
    let with = train_toy(&w, train)?;
    let without =
        train_toy(&w, &TrainConfig { objective: Objective::HardNegative { p_start: 0.0, p_end: 0.0 }, ..*train })?;
    let raw = {
        let s = &w.eval;
        crate::eval::hn_discrimination(&s.images, &s.image_caption, &s.text, &s.hn_text)?
    };
    Ok(CurriculumOutcome {
        seed: world.seed,
        hn_accuracy_raw: raw,
        hn_accuracy_curriculum: with.report.evaluation.hn_accuracy,
        hn_accuracy_none: without.report.evaluation.hn_accuracy,
        curriculum: with.report,
        none: without.report,
    })
}
