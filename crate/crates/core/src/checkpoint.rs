//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LASSOCLR"            8-byte magic
//! version               u32
//! manifest_len          u64
//! manifest              manifest_len bytes of UTF-8 JSON
//! blob                  raw f32 payload, addressed by the manifest
//! ```
//!
//! The manifest is `{format_version, model_config, tensors: [{name, shape,
//! dtype, byte_offset}]}` with offsets relative to the start of the blob.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LASSOCLR";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(model.params.numel() * 4);
    let mut tensors = Vec::new();
    for (name, t) in model.params.named() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            byte_offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_config: model.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn truncated(needed: u64, available: usize) -> Error {
    CheckpointError::Truncated {
        needed,
        available: available as u64,
    }
    .into()
}

pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 8 {
        return Err(truncated(HEADER_LEN as u64, bytes.len()));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN as u64, bytes.len()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let manifest_end = (HEADER_LEN as u64).saturating_add(manifest_len);
    if manifest_end > bytes.len() as u64 {
        return Err(truncated(manifest_end, bytes.len()));
    }
    let manifest_end = manifest_end as usize;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.format_version != version {
        return Err(CheckpointError::Manifest(format!(
            "manifest says version {}, header says {version}",
            manifest.format_version
        ))
        .into());
    }
    Ok((manifest, &bytes[manifest_end..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (manifest, blob) = read_manifest(bytes)?;
    manifest
        .model_config
        .validate()
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(CheckpointError::Manifest(format!("{}: unsupported dtype {}", e.name, e.dtype)).into());
        }
        let len = e.shape.iter().product::<usize>() as u64 * 4;
        spans.push((e.byte_offset, e.byte_offset.saturating_add(len), &e.name));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(CheckpointError::Manifest(format!("tensors {} and {} overlap", w[0].2, w[1].2)).into());
        }
    }
    if let Some(end) = spans.iter().map(|s| s.1).max() {
        if end > blob.len() as u64 {
            let header = (bytes.len() - blob.len()) as u64;
            return Err(truncated(header + end, bytes.len()));
        }
    }

    let mut named = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let start = e.byte_offset as usize;
        let n: usize = e.shape.iter().product();
        let data = blob[start..start + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        named.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    let params = ModelParams::from_named(&manifest.model_config, named)
        .map_err(|e| CheckpointError::Tensors(e.to_string()))?;
    Model::new(manifest.model_config, params)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Hex SHA-256 of the serialized bytes.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest(&bytes))
}
