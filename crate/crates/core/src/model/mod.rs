//! Network assembly: per-frame ResUnit features, the variational latent
//! layer, and the bidirectional GRU classifier with windowed attention.

mod classifier;
mod config;
mod network;
mod params;
mod representation;

pub use classifier::{bidirectional_gru, gru_direction, ClassifierNet, GruIdx, Sequence};
pub use config::{attention_window_spans, sequence_lengths, Frontend, ModelConfig, WindowLaw};
pub use network::{
    time_major, ForwardOutput, LatentSequence, Mode, Model, TrainTerms, REFERENCE_CLASSIFIER_PARAMS,
    REFERENCE_REPRESENTATION_PARAMS,
};
pub use params::{glorot, uniform, ParamStore};
pub use representation::{EncodedFrames, RepresentationLoss, RepresentationNet};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spectrogram has {found} frames, need at least {needed}")]
    TooFewFrames { found: usize, needed: usize },
    #[error("the dense projection front end has no decoder")]
    NoDecoder,
}
