//! Desk-scale training: loss and gradients through the hand-written reverse
//! pass, AdamW, warmup/cosine schedule, the synthetic repeat task and
//! checkpoint series on disk.

mod data;
mod optim;
mod run;
mod schedule;

use std::path::PathBuf;

use thiserror::Error;

use crate::transformer::{ArchiveError, TransformerError};

pub use data::{
    generate_cycled_batch, generate_repeat_batch, generate_shifted_repeat_batch, Batch, RepeatLayout, RepeatTask,
};
pub use optim::AdamW;
pub use run::{
    batch_loss, checkpoint_file_name, loss_and_grad, train_run, train_run_observed, train_step, CheckpointEntry, CheckpointSeries,
    TrainEvent, TrainState, SERIES_FILE,
};
pub use schedule::{lr_schedule, TrainConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid task parameters: {0}")]
    InvalidTask(String),
    #[error("non-finite loss {loss} at step {step} (lr {lr:.3e}, grad norm {grad_norm:.3e})")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        lr: f64,
        grad_norm: f64,
    },
    #[error("checkpoint at iteration {iteration}: {source}")]
    Checkpoint {
        iteration: usize,
        #[source]
        source: ArchiveError,
    },
    #[error("checkpoint series {path}: {message}")]
    Series { path: PathBuf, message: String },
    #[error("io error at iteration {iteration} on {path}: {source}")]
    Io {
        iteration: usize,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] TransformerError),
}
