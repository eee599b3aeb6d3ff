//! Two modality encoders trained jointly with symmetric InfoNCE.

mod diagnostics;
mod loss;
mod train;

pub use diagnostics::{align_maxent_diagnostic, alignment, knn_entropy, Diagnostic};
pub use loss::{info_nce_loss, info_nce_on_tape, similarity_logits, Similarity};
pub use train::{
    block_means, train, write_history_csv, Checkpoint, Encoder, EncoderConfig, FixedBatch,
    HistoryRecord, LrSchedule, PairSampler, Representation, TrainConfig, TrainedPair, Trainer,
    CHECKPOINT_VERSION,
};

use thiserror::Error;

use crate::latent::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum MmclError {
    #[error("paired batches differ in shape: {zx:?} vs {zt:?}")]
    ShapeMismatch { zx: (usize, usize), zt: (usize, usize) },
    #[error("InfoNCE needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("entropy is undefined for {0} samples without distinct neighbours")]
    EntropyUndefined(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: usize,
        /// State before the failing step.
        last_good: Box<Checkpoint>,
    },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
