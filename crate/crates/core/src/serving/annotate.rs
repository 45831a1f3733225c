use serde::{Deserialize, Serialize};

use crate::autodiff::Rng;
use crate::model::Mode;
use crate::signal_io::RhythmClass;
use crate::training::argmax;

use super::artifact::ModelArtifact;
use super::ServingError;

pub const WINDOW_S: f64 = 13.0;
pub const MAX_DURATION_S: f64 = 60.0;
pub const MIN_FS_HZ: f64 = 100.0;
pub const MAX_FS_HZ: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateRequest {
    /// Millivolts.
    pub samples: Vec<f64>,
    pub fs_hz: f64,
    #[serde(default)]
    pub lead: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotateResponse {
    pub label: RhythmClass,
    pub probs: Vec<f64>,
    pub model_hash: String,
    pub frames: usize,
}

/// Classifies the leading 13 s of the request.
pub fn annotate(artifact: &ModelArtifact, req: &AnnotateRequest) -> Result<AnnotateResponse, ServingError> {
    if !(MIN_FS_HZ..=MAX_FS_HZ).contains(&req.fs_hz) {
        return Err(ServingError::BadSampleRate(req.fs_hz));
    }
    let duration = req.samples.len() as f64 / req.fs_hz;
    if duration < WINDOW_S {
        return Err(ServingError::TooShort {
            required_s: WINDOW_S,
            found_s: duration,
        });
    }
    if duration > MAX_DURATION_S {
        return Err(ServingError::TooLong {
            limit_s: MAX_DURATION_S,
            found_s: duration,
        });
    }
    if req.samples.iter().any(|v| !v.is_finite()) {
        return Err(ServingError::InvalidSamples);
    }
    let n = (WINDOW_S * req.fs_hz).round() as usize;
    let spec = artifact.preprocessor.run(&req.samples[..n.min(req.samples.len())], req.fs_hz)?;
    let out = artifact.model.forward_full(&spec, Mode::Infer, &mut Rng::new(0))?;
    let label = RhythmClass::from_id(argmax(&out.probs)).ok_or(ServingError::Internal("class id out of range"))?;
    Ok(AnnotateResponse {
        label,
        probs: out.probs,
        model_hash: artifact.header.content_hash.clone(),
        frames: spec.n_frames(),
    })
}
