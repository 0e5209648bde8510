//! Synthetic image-text curation and contrastive training toolkit.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod caption;
pub mod emb1;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod sampler;
pub mod scalar;
pub mod scheduler;
pub mod spectral;

pub use caption::{AxisSet, CaptionRecord, PairedSample, SimilarityConfig};
pub use error::{Error, Result};
pub use matrix::{cosine_similarity_matrix, EmbeddingMatrix, Matrix};
pub use scalar::Scalar;
pub use scheduler::{BatchPlan, CurriculumSchedule, CurriculumScheduler, LeftoverQueue};

/// Double-precision embeddings, the working type of losses and metrics.
pub type Embeddings = EmbeddingMatrix<f64>;
/// Single-precision embeddings, as stored in `EMB1` files.
pub type Embeddings32 = EmbeddingMatrix<f32>;
pub type Batch = losses::BatchTensors<f64>;
pub type Image = spectral::ImageGrid<f64>;
pub type Image32 = spectral::ImageGrid<f32>;
