//! Two-stage training, cross-validation, metrics, and the synthetic
//! surrogate dataset.

mod config;
mod cv;
mod metrics;
pub mod plot;
mod stage;
pub mod synth;

pub use config::{LatentInput, RunConfig, TrainConfig};
pub use cv::{
    comparative_experiment, make_splits, params_hash, prepare_examples, run_cv, run_fold, standard_variants,
    EpochPoint, Example, FoldOutcome, FoldReport, Stage1Summary, Variant, VariantResult,
};
pub use metrics::{argmax, compute_metrics, confusion_matrix, MetricsReport};
pub use stage::{
    compute_eta, freeze_representation, joint_step, moving_average, should_switch_stage, smoothed_tail, stage1_step,
    stage2_step, Stage, Stage1Stats, StageState, SMOOTHING_WINDOW,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dsp::DspError;
use crate::model::ModelError;
use crate::signal_io::SignalIoError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("negative loss (recon {recon}, latent {latent})")]
    NegativeLoss { recon: f64, latent: f64 },
    #[error("non-finite loss in {stage:?} stage at iteration {iteration}: {detail}")]
    NaNLoss { stage: Stage, iteration: usize, detail: String },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("empty batch")]
    EmptyBatch,
    #[error("stage order violated: {0}")]
    StageOrder(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("split references unknown example `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    SignalIo(#[from] SignalIoError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
