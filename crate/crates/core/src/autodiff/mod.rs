//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Provides exactly what the network and its two losses need: elementwise
//! arithmetic, matmul/dense, 1-D convolution and pooling, activations,
//! softmax, concat/slice, the Gaussian KL term, mean-squared reconstruction
//! error, softmax cross-entropy and the reparameterized sample.

mod optim;
mod rng;
mod tape;
mod tensor;

pub use optim::Adam;
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

impl Tape {
    /// Draws standard-normal noise from `rng` and records
    /// `mean + scale * exp(0.5 * log_var) * noise`.
    pub fn reparameterize(
        &mut self,
        mean: Var,
        log_var: Var,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Var, AutodiffError> {
        let noise = if scale == 0.0 {
            vec![0.0; self.value(mean).len()]
        } else {
            rng.normals(self.value(mean).len())
        };
        self.reparameterize_with(mean, log_var, scale, noise)
    }
}
