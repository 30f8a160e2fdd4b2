//! Decoder-only GPT-2 style transformer with attention capture and head
//! ablation.
//!
//! Parameters are stored as `f32`; all arithmetic runs in `f64`.

pub mod archive;
mod capture;
mod config;
pub(crate) mod engine;
pub mod layout;
mod model;

use thiserror::Error;

pub use archive::{
    load_weights, read_archive, save_weights, write_archive, ArchiveError, ArchiveMetadata, WeightArchive,
};
pub use capture::{AblationMask, AttentionCapture, HeadCapture, HeadId, ScoreSource};
pub use config::ModelConfig;
pub use layout::{Layout, TensorSpec};
pub(crate) use model::check_tokens;
pub use model::{ForwardOutput, Model, PreparedModel, INIT_STD};

#[derive(Debug, Error)]
pub enum TransformerError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("head {0} does not exist in this model")]
    InvalidHead(HeadId),
    #[error("sequence of length {len} is too short (need at least {min})")]
    SequenceTooShort { len: usize, min: usize },
    #[error("sequence of length {len} exceeds context length {ctx_len}")]
    SequenceTooLong { len: usize, ctx_len: usize },
    #[error("token {token} at position {position} is outside the vocabulary of {vocab_size}")]
    TokenOutOfRange {
        position: usize,
        token: u32,
        vocab_size: usize,
    },
    #[error("invalid attention capture: {0}")]
    InvalidCapture(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}
