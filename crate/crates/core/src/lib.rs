//! Simulation lab for multimodal contrastive learning under cross-modal
//! misalignment.
//!
//! Latent semantics `s` and modality-specific variables `m_x`, `m_t` are
//! pushed through random invertible generators into paired "image" and
//! "text" observations. The text side only sees a selected subset of the
//! semantics, some of which may be randomly perturbed. Two encoders are
//! trained with symmetric InfoNCE, and probes then measure which latent
//! coordinates the learned representations retain.

pub mod bias;
pub mod coverage;
pub mod downstream;
pub mod harness;
pub mod latent;
pub mod mmcl;
pub mod numerics;
pub mod probe;

pub use bias::{BiasConfig, BiasSetting, SubsetCode};
pub use latent::{GenerativeModel, LatentSpec};
pub use mmcl::{EncoderConfig, Representation, TrainConfig, TrainedPair};
pub use numerics::{Matrix, NumericsError};
