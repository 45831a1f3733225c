//! Record ingestion: headers, packed signal files, rhythm annotation
//! exports, chunking, and stratified cross-validation splits.

mod annotations;
mod chunks;
mod header;
mod signal;
mod split;
pub mod store;
mod types;

pub use annotations::{read_annotations, scan_annotations, AnnotationScan, RhythmChange};
pub use chunks::{extract_chunks, extract_chunks_with_boundaries, tile_chunks, ChunkExtraction, ChunkPolicy, LeadPolicy};
pub use header::{parse_header, LeadMeta, RecordMeta, StorageFormat};
pub use signal::{read_signal, read_signal_212, unpack_16, unpack_212};
pub use split::{oversample, stratified_kfold};
pub use types::{Chunk, DatasetSplit, EcgRecord, Labeled, LabeledId, Lead, RhythmAnnotation, RhythmClass};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("malformed header (line {line}): {message}")]
    MalformedHeader { line: usize, message: String },
    #[error("unsupported storage format {0}")]
    UnsupportedFormat(u16),
    #[error("leads stored in more than one signal file")]
    MultipleSignalFiles,
    #[error("truncated signal data: need {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("checksum mismatch on lead {lead}: header {expected}, data {found}")]
    ChecksumMismatch { lead: usize, expected: i16, found: i16 },
    #[error("unknown rhythm token `{0}`")]
    UnknownRhythmToken(String),
    #[error("malformed annotation (line {line}): {message}")]
    MalformedAnnotation { line: usize, message: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("class {class} has {count} members, fewer than {folds} folds")]
    ClassTooSmall {
        class: RhythmClass,
        count: usize,
        folds: usize,
    },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PartialEq for SignalIoError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
