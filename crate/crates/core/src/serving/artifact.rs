//! Model file: `ECGM`, `u32` format version, `u64` header length, JSON
//! header, then little-endian `f32` blobs in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{FilterSpec, Preprocessor, SpectrogramConfig};
use crate::model::{Frontend, Model, ModelConfig, ParamStore};

use super::ServingError;

pub const MAGIC: &[u8; 4] = b"ECGM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub net: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub fold: Option<usize>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub frontend: Frontend,
    pub representation_frozen: bool,
    pub classifier_sample_scale: f64,
    pub filter: FilterSpec,
    pub spectrogram: SpectrogramConfig,
    pub provenance: Provenance,
    /// SHA-256 of the blob section.
    pub content_hash: String,
    pub manifest: Vec<ManifestEntry>,
}

/// A loaded model with the front end it was trained behind.
#[derive(Clone, Debug)]
pub struct ModelArtifact {
    pub header: ArtifactHeader,
    pub model: Model,
    pub preprocessor: Preprocessor,
}

fn nets(model: &Model) -> [(&'static str, &ParamStore); 2] {
    [
        ("representation", model.representation.params()),
        ("classifier", model.classifier.params()),
    ]
}

fn blob_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, params) in nets(model) {
        for t in params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn content_hash(blobs: &[u8]) -> String {
    hex::encode(Sha256::digest(blobs))
}

/// Serialized artifact bytes.
pub fn encode_model(model: &Model, pre: &Preprocessor, provenance: Provenance) -> Result<Vec<u8>, ServingError> {
    let blobs = blob_bytes(model);
    let manifest = nets(model)
        .iter()
        .flat_map(|(net, params)| {
            params.names().iter().zip(params.tensors()).map(move |(name, t)| ManifestEntry {
                net: net.to_string(),
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
        })
        .collect();
    let header = ArtifactHeader {
        format_version: FORMAT_VERSION,
        model_config: model.config.clone(),
        frontend: model.frontend(),
        representation_frozen: model.representation_frozen,
        classifier_sample_scale: model.classifier_sample_scale,
        filter: pre.filter_spec().clone(),
        spectrogram: pre.spectrogram_config().clone(),
        provenance,
        content_hash: content_hash(&blobs),
        manifest,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    Ok(out)
}

pub fn save_model(model: &Model, pre: &Preprocessor, provenance: Provenance, path: &Path) -> Result<String, ServingError> {
    let bytes = encode_model(model, pre, provenance)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    Ok(content_hash(&bytes[16 + header_len..]))
}

fn truncated(what: &str, need: usize, found: usize) -> ServingError {
    ServingError::ManifestShapeMismatch(format!("{what}: need {need} bytes, found {found}"))
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelArtifact, ServingError> {
    if bytes.len() < 16 {
        return Err(truncated("preamble", 16, bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(ServingError::NotAnArtifact);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ServingError::FormatVersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(truncated("header", header_len, body.len()));
    }
    let header: ArtifactHeader = serde_json::from_slice(&body[..header_len])?;
    let blobs = &body[header_len..];
    let need: usize = header.manifest.iter().map(|e| 4 * e.shape.iter().product::<usize>()).sum();
    if blobs.len() != need {
        return Err(truncated("tensor blobs", need, blobs.len()));
    }
    let found_hash = content_hash(blobs);
    if found_hash != header.content_hash {
        return Err(ServingError::HashMismatch {
            stored: header.content_hash.clone(),
            found: found_hash,
        });
    }

    let mut model = Model::new(&header.model_config, header.frontend, 0)?;
    model.representation_frozen = header.representation_frozen;
    model.classifier_sample_scale = header.classifier_sample_scale;
    let mut offset = 0;
    let mut entries = header.manifest.iter();
    for (net, params) in [
        ("representation", model.representation.params_mut()),
        ("classifier", model.classifier.params_mut()),
    ] {
        let names = params.names().to_vec();
        for (name, tensor) in names.iter().zip(params.tensors_mut()) {
            let entry = entries
                .next()
                .ok_or_else(|| ServingError::ManifestShapeMismatch(format!("manifest ends before {net}/{name}")))?;
            if entry.net != net || &entry.name != name || entry.shape != tensor.shape() {
                return Err(ServingError::ManifestShapeMismatch(format!(
                    "manifest entry {}/{} {:?} does not match {net}/{name} {:?}",
                    entry.net,
                    entry.name,
                    entry.shape,
                    tensor.shape()
                )));
            }
            for v in tensor.data_mut() {
                *v = f32::from_le_bytes(blobs[offset..offset + 4].try_into().expect("4 bytes")) as f64;
                offset += 4;
            }
        }
    }
    if entries.next().is_some() {
        return Err(ServingError::ManifestShapeMismatch("manifest has extra entries".into()));
    }
    let preprocessor = Preprocessor::new(&header.filter, header.spectrogram.clone())?;
    Ok(ModelArtifact {
        header,
        model,
        preprocessor,
    })
}

pub fn load_model(path: &Path) -> Result<ModelArtifact, ServingError> {
    decode_model(&std::fs::read(path)?)
}
