use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use synthkit_lab::{generate_world, train_toy, Objective, TrainConfig, TrainReport, WorldConfig};

use super::{fmt, write_csv, write_json};
use crate::{CliResult, RunContext, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveFlag {
    /// Multi-positive loss plus the weighted image-to-image term.
    #[value(alias = "mp")]
    MultiPositive,
    /// Mixed hard-negative loss on curriculum batches.
    #[value(alias = "hn")]
    HardNegative,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 64)]
    pub concepts: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Generators m; image j of a caption comes from generator j mod m.
    #[arg(long, default_value_t = 4)]
    pub generators: usize,
    #[arg(long, default_value_t = 4)]
    pub fingerprint_slots: usize,
    /// Fingerprint strength.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Per-coordinate image noise.
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    /// Per-coordinate text noise.
    #[arg(long, default_value_t = 0.05)]
    pub text_noise: f64,
    #[arg(long, default_value_t = 0.6)]
    pub caption_spread: f64,
    #[arg(long, default_value_t = 0.6)]
    pub hn_shift: f64,
    /// Images per caption n+.
    #[arg(long, default_value_t = 4)]
    pub positives: usize,
    #[arg(long, default_value_t = 200)]
    pub captions: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_captions: usize,
    /// Seed of the world; defaults to --seed.
    #[arg(long)]
    pub world_seed: Option<u64>,

    #[arg(long, value_enum, default_value_t = ObjectiveFlag::MultiPositive)]
    pub objective: ObjectiveFlag,
    /// Weight of the image-to-image term (multi-positive only).
    #[arg(long, default_value_t = 1.0)]
    pub i2i_weight: f64,
    /// Hard-negative ratio at the first epoch (hard-negative only).
    #[arg(long, default_value_t = 0.0)]
    pub p_start: f64,
    /// Hard-negative ratio at the last epoch (hard-negative only).
    #[arg(long, default_value_t = 0.5)]
    pub p_end: f64,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    /// Peak learning rate of the warmup-then-cosine schedule.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub warmup_epochs: usize,
    /// Initial temperature.
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// Keep the temperature fixed instead of learning it.
    #[arg(long)]
    pub fixed_temperature: bool,
    #[arg(long, default_value_t = 0.05)]
    pub init_jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            concepts: self.concepts,
            dim: self.dim,
            generators: self.generators,
            fingerprint_slots: self.fingerprint_slots,
            alpha: self.alpha,
            sigma: self.sigma,
            text_noise: self.text_noise,
            caption_spread: self.caption_spread,
            hn_shift: self.hn_shift,
            positives: self.positives,
            captions: self.captions,
            eval_captions: self.eval_captions,
            seed: self.world_seed.unwrap_or(self.seed),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let objective = match self.objective {
            ObjectiveFlag::MultiPositive => Objective::MultiPositive { i2i_weight: self.i2i_weight },
            ObjectiveFlag::HardNegative => Objective::HardNegative { p_start: self.p_start, p_end: self.p_end },
        };
        TrainConfig {
            objective,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            warmup_epochs: self.warmup_epochs,
            temperature: self.temperature,
            learn_temperature: !self.fixed_temperature,
            init_jitter: self.init_jitter,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    world: WorldConfig,
    train: TrainConfig,
    report: &'a TrainReport,
}

pub fn run(a: &TrainArgs, ctx: &mut RunContext) -> CliResult<Status> {
    let world_cfg = a.world_config();
    let train_cfg = a.train_config();
    ctx.seed(world_cfg.seed);
    ctx.seed(train_cfg.seed);
    let world = generate_world(&world_cfg)?;
    let outcome = train_toy(&world, &train_cfg)?;
    let r = &outcome.report;
    if let Some(p) = ctx.output("report.json") {
        write_json(&p, &Report { world: world_cfg, train: train_cfg, report: r })?;
    }
    if let Some(p) = ctx.output("traces.csv") {
        let rows = (0..r.epoch_loss.len()).map(|e| {
            vec![
                (e + 1).to_string(),
                fmt(r.epoch_loss[e]),
                fmt(r.temperature[e]),
                fmt(r.learning_rate[e]),
                fmt(r.scheduled_hn_ratio[e]),
                fmt(r.realized_hn_ratio[e]),
            ]
        });
        write_csv(&p, &["epoch", "loss", "temperature", "learning_rate", "scheduled_p", "realized_p"], rows)?;
    }
    let ev = &r.evaluation;
    println!("{}: loss {:.4} -> {:.4} over {} steps", r.objective, r.initial_loss, r.final_loss, r.steps);
    match ev.probe_accuracy {
        Some(p) => println!("generator probe {p:.4}"),
        None => println!("generator probe n/a (one generator)"),
    }
    println!("recall@1 {:.4}  hard-negative accuracy {:.4}", ev.retrieval.recall_at_1, ev.hn_accuracy);
    Ok(Status::Ok)
}
