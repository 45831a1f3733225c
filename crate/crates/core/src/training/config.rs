use serde::{Deserialize, Serialize};

use crate::model::{Frontend, ModelConfig};

use super::TrainingError;

/// What the classifier consumes once the representation net is frozen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInput {
    /// `z ~ N(mean, eta_frozen * std)` drawn fresh for every batch.
    #[default]
    Sampled,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Smoothed stage-1 loss at which the representation net is frozen.
    /// The default of 1.8 was calibrated on the synthetic set, where the
    /// loss starts near 13 and levels off around 1.
    pub stage1_loss_threshold: f64,
    pub max_epochs_per_stage: usize,
    /// Supervised epochs, for the classifier stage and for joint training.
    pub classifier_epochs: usize,
    pub lr: f64,
    pub k_folds: usize,
    pub seed: u64,
    pub eta_min: f64,
    pub frontend: Frontend,
    pub latent_input: LatentInput,
    /// Shift and scale latent coordinates to zero mean and unit spread over
    /// the training chunks before freezing.
    pub standardize_latents: bool,
    /// Chunks per tape when a batch is split to bound memory.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 140,
            stage1_loss_threshold: 1.8,
            max_epochs_per_stage: 30,
            classifier_epochs: 30,
            lr: 1e-3,
            k_folds: 5,
            seed: 0,
            eta_min: 1e-3,
            frontend: Frontend::Vae,
            latent_input: LatentInput::Sampled,
            standardize_latents: true,
            micro_batch: 10,
        }
    }
}

impl TrainConfig {
    /// Settings used for the 500-chunk synthetic set: smaller batches, a
    /// larger step, and mean latents for the classifier.
    pub fn synthetic() -> Self {
        Self {
            batch_size: 20,
            lr: 3e-3,
            classifier_epochs: 15,
            latent_input: LatentInput::Mean,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.eta_min > 0.0 && self.eta_min <= 1.0) {
            return fail("eta_min must lie in (0, 1]");
        }
        if !(self.stage1_loss_threshold > 0.0) {
            return fail("stage1_loss_threshold must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if self.max_epochs_per_stage == 0 || self.classifier_epochs == 0 {
            return fail("epoch counts must be positive");
        }
        if self.k_folds < 2 {
            return fail("k_folds must be at least 2");
        }
        if self.micro_batch == 0 {
            return fail("micro_batch must be at least 1");
        }
        Ok(())
    }
}

/// Flat JSON config accepted by the `train` command: training and model
/// fields side by side.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainingError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.train.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_json_fills_both_halves() {
        let cfg = RunConfig::from_json(r#"{"batch_size": 7, "rnn_hidden": 15, "frontend": "dense_projection"}"#).unwrap();
        assert_eq!(cfg.train.batch_size, 7);
        assert_eq!(cfg.model.rnn_hidden, 15);
        assert_eq!(cfg.train.frontend, Frontend::DenseProjection);
        assert_eq!(cfg.model.latent_dim, 8);
    }

    #[test]
    fn rejects_bad_eta_min() {
        let cfg = TrainConfig {
            eta_min: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
