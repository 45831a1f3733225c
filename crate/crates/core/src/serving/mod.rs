//! Model files, single-request annotation, and the HTTP endpoint.

mod annotate;
mod artifact;
mod http;

pub use annotate::{annotate, AnnotateRequest, AnnotateResponse, MAX_DURATION_S, MAX_FS_HZ, MIN_FS_HZ, WINDOW_S};
pub use artifact::{
    content_hash, decode_model, encode_model, load_model, save_model, ArtifactHeader, ManifestEntry, ModelArtifact,
    Provenance, FORMAT_VERSION, MAGIC,
};
pub use http::{router, serve, ErrorBody, Health};

use thiserror::Error;

use crate::dsp::DspError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum ServingError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model artifact (bad magic)")]
    NotAnArtifact,
    #[error("format version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("manifest/shape mismatch: {0}")]
    ManifestShapeMismatch(String),
    #[error("content hash mismatch: header {stored}, blobs {found}")]
    HashMismatch { stored: String, found: String },
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("signal lasts {found_s:.2} s; at least {required_s} s required")]
    TooShort { required_s: f64, found_s: f64 },
    #[error("signal lasts {found_s:.2} s; at most {limit_s} s accepted")]
    TooLong { limit_s: f64, found_s: f64 },
    #[error("sample rate {0} Hz outside [100, 1000]")]
    BadSampleRate(f64),
    #[error("samples must be finite")]
    InvalidSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("internal: {0}")]
    Internal(&'static str),
}

impl ServingError {
    /// Machine-readable code for request validation failures.
    pub fn validation_code(&self) -> Option<&'static str> {
        match self {
            Self::TooShort { .. } => Some("too_short"),
            Self::TooLong { .. } => Some("too_long"),
            Self::BadSampleRate(_) => Some("bad_sample_rate"),
            Self::InvalidSamples => Some("invalid_samples"),
            _ => None,
        }
    }
}
