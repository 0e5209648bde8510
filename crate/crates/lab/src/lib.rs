//! Desk-scale lab for generator invariance and hard-negative curricula.
//!
//! Builds synthetic embedding worlds in which each image carries a
//! generator fingerprint orthogonal to all semantics, trains linear toy
//! encoders on them with the contrastive losses of `synthkit-core`, and probes
//! what the learned image features still reveal about their generator.

pub mod encoder;
pub mod eval;
pub mod experiments;
pub mod probe;
pub mod train;
pub mod world;

pub use encoder::ToyEncoder;
pub use eval::{eval_retrieval, hn_discrimination, RetrievalScores};
pub use probe::{probe_generator, ProbeConfig, ProbeResult};
pub use train::{evaluate, train_toy, Evaluation, Objective, TrainConfig, TrainOutcome, TrainReport};
pub use world::{generate_world, Split, World, WorldConfig};
