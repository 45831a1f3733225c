use serde::{Deserialize, Serialize};

use super::ModelError;

/// Growth law for the attention window span across recurrent layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLaw {
    /// `w_l = w_1 * l`
    #[default]
    Linear,
    /// `w_l = w_1 * l^2`
    Quadratic,
}

/// How per-frame latent vectors are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    /// Variational encoder/decoder trained first, then frozen.
    #[default]
    Vae,
    /// One deterministic dense layer, trained jointly with the classifier.
    DenseProjection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_res_units: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub min_attention_window: usize,
    pub n_classes: usize,
    pub kept_bins: usize,
    pub res_channels: usize,
    pub res_kernel: usize,
    pub attention_dim: usize,
    pub head_hidden: usize,
    pub window_law: WindowLaw,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_res_units: 1,
            feature_dim: 20,
            latent_dim: 8,
            rnn_hidden: 10,
            rnn_layers: 4,
            min_attention_window: 3,
            n_classes: 5,
            kept_bins: 60,
            res_channels: 4,
            res_kernel: 3,
            attention_dim: 20,
            head_hidden: 16,
            window_law: WindowLaw::Linear,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_res_units", self.n_res_units),
            ("feature_dim", self.feature_dim),
            ("latent_dim", self.latent_dim),
            ("rnn_hidden", self.rnn_hidden),
            ("min_attention_window", self.min_attention_window),
            ("n_classes", self.n_classes),
            ("kept_bins", self.kept_bins),
            ("res_channels", self.res_channels),
            ("attention_dim", self.attention_dim),
            ("head_hidden", self.head_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.rnn_layers < 2 {
            return Err(ModelError::InvalidConfig("rnn_layers must be at least 2".into()));
        }
        if self.res_kernel.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig("res_kernel must be odd".into()));
        }
        if !self.kept_bins.is_multiple_of(self.feature_dim) {
            return Err(ModelError::InvalidConfig(format!(
                "kept_bins {} is not a multiple of feature_dim {}",
                self.kept_bins, self.feature_dim
            )));
        }
        Ok(())
    }

    /// Pooling width that maps `kept_bins` onto `feature_dim`.
    pub fn pool_width(&self) -> usize {
        self.kept_bins / self.feature_dim
    }
}

/// Window span after each recurrent layer except the last.
pub fn attention_window_spans(cfg: &ModelConfig) -> Vec<usize> {
    (1..cfg.rnn_layers)
        .map(|l| match cfg.window_law {
            WindowLaw::Linear => cfg.min_attention_window * l,
            WindowLaw::Quadratic => cfg.min_attention_window * l * l,
        })
        .collect()
}

/// Sequence length entering each recurrent layer, followed by the length
/// after the last windowed stage (the global stage then reduces it to 1).
pub fn sequence_lengths(n_frames: usize, spans: &[usize]) -> Vec<usize> {
    let mut lengths = vec![n_frames];
    for &s in spans {
        let prev = *lengths.last().expect("nonempty");
        lengths.push(prev.div_ceil(s));
    }
    lengths
}
