//! On-disk chunk store: `<root>/<class>/<chunk_id>.f32` (little-endian f32)
//! with a `<chunk_id>.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{Chunk, RhythmClass};
use super::SignalIoError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkSidecar {
    pub record_id: String,
    pub start_index: usize,
    pub fs: f64,
    pub label: RhythmClass,
}

pub fn write_f32_le(path: &Path, values: &[f64]) -> std::io::Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f64>, SignalIoError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(SignalIoError::TruncatedData {
            expected: bytes.len().div_ceil(4) * 4,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

/// Writes `chunk` under `root/<class>/`; returns the blob path.
pub fn write_chunk(root: &Path, chunk: &Chunk) -> Result<PathBuf, SignalIoError> {
    let dir = root.join(chunk.label.dir_name());
    fs::create_dir_all(&dir)?;
    let id = chunk.id();
    let blob = dir.join(format!("{id}.f32"));
    write_f32_le(&blob, &chunk.samples)?;
    let sidecar = ChunkSidecar {
        record_id: chunk.record_id.clone(),
        start_index: chunk.start_index,
        fs: chunk.sample_rate_hz,
        label: chunk.label,
    };
    fs::write(dir.join(format!("{id}.json")), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(blob)
}

/// Reads one chunk from its blob path (sidecar alongside).
pub fn read_chunk(blob: &Path) -> Result<Chunk, SignalIoError> {
    let sidecar: ChunkSidecar = serde_json::from_slice(&fs::read(blob.with_extension("json"))?)?;
    Ok(Chunk {
        record_id: sidecar.record_id,
        start_index: sidecar.start_index,
        samples: read_f32_le(blob)?,
        sample_rate_hz: sidecar.fs,
        label: sidecar.label,
    })
}

/// Every chunk in the store, ordered by class then file name.
pub fn read_store(root: &Path) -> Result<Vec<Chunk>, SignalIoError> {
    let mut chunks = Vec::new();
    for class in RhythmClass::ALL {
        let dir = root.join(class.dir_name());
        if !dir.is_dir() {
            continue;
        }
        let mut blobs: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "f32"))
            .collect();
        blobs.sort();
        for blob in blobs {
            chunks.push(read_chunk(&blob)?);
        }
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let chunk = Chunk {
            record_id: "418".into(),
            start_index: 1200,
            samples: vec![0.5, -0.25, 1.0],
            sample_rate_hz: 250.0,
            label: RhythmClass::VfVfl,
        };
        let blob = write_chunk(dir.path(), &chunk).unwrap();
        assert!(blob.starts_with(dir.path().join("VFVFL")));
        assert_eq!(read_chunk(&blob).unwrap(), chunk);
        assert_eq!(read_store(dir.path()).unwrap(), vec![chunk]);
    }
}
