//! Temporal fusion network without the self-attention block: static
//! covariate encoders, variable selection, LSTM encoder-decoder, gated
//! post-processing and a shared linear head, trained on the autodiff tape.

mod blocks;
mod config;
mod io;
mod model;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AdError;

pub use blocks::{
    lstm_cell, repeat_rows, Grn, Init, Linear, Lstm, LstmState, ParamStore, Selection, Vsn,
};
pub use config::{LossKind, Preset, TftConfig};
pub use io::{
    from_bytes, load_model, load_model_for, save_model, to_bytes, MODEL_MAGIC, MODEL_VERSION,
};
pub use model::{Batch, Forward, ModelMeta, SelectionWeights, TftModel, WindowInputs};
pub use train::{
    clip_global_norm, evaluate_loss, history_csv, train, train_step, train_with, write_history,
    Adam, EarlyStop, EpochRecord, TrainReport, Verdict,
};

#[derive(Debug, Error)]
pub enum TftError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite activation in layer '{0}'")]
    NonFinite(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch carries no targets")]
    MissingTargets,
    #[error("channel order mismatch: model expects {expected:?}, got {found:?}")]
    ChannelOrder {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("model container version {found} is not supported (expected {supported})")]
    Version { found: u32, supported: u32 },
    #[error("model container checksum mismatch")]
    Checksum,
    #[error("malformed model container: {0}")]
    Container(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl TftError {
    /// Folds into an [`AdError`] so network code can run under
    /// [`crate::autodiff::grad_check_params`].
    pub fn into_ad(self) -> AdError {
        match self {
            TftError::Autodiff(e) => e,
            other => AdError::Invalid {
                op: "tft",
                msg: other.to_string(),
            },
        }
    }
}
