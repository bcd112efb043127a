//! Parameter checkpoints: "DCDK", u32 LE version, u64 LE manifest length,
//! a JSON manifest, then raw f32 LE parameter data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{DenoiserConfig, DenoiserParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCDK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: DenoiserConfig,
    pub params: Vec<ManifestEntry>,
}

pub fn encode_params(params: &DenoiserParams<f32>) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for p in params.params() {
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
        });
        offset += p.len() * 4;
    }
    let manifest = serde_json::to_vec(&Manifest {
        config: params.config,
        params: entries,
    })
    .map_err(|e| Error::Internal(format!("manifest encoding: {e}")))?;
    let mut out = Vec::with_capacity(HEADER + manifest.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for p in params.params() {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<DenoiserParams<f32>> {
    if bytes.len() < HEADER {
        return Err(Error::Length(format!("checkpoint header needs {HEADER} bytes, got {}", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let mend = usize::try_from(mlen)
        .ok()
        .and_then(|m| HEADER.checked_add(m))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Length(format!("manifest length {mlen} exceeds file")))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[HEADER..mend]).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let data = &bytes[mend..];
    let mut params = DenoiserParams::<f32>::init_with_std(manifest.config, 0, 0.0)?;
    let slots = params.params_mut();
    if slots.len() != manifest.params.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.params.len(),
            slots.len()
        )));
    }
    let mut expected_offset = 0;
    for (slot, entry) in slots.into_iter().zip(&manifest.params) {
        if entry.name != slot.name || entry.shape != slot.shape || entry.offset != expected_offset {
            return Err(Error::Format(format!("manifest entry {} does not match the model", entry.name)));
        }
        let end = entry.offset + slot.len() * 4;
        let raw = data
            .get(entry.offset..end)
            .ok_or_else(|| Error::Length(format!("data for {} is truncated", entry.name)))?;
        for (v, chunk) in slot.value.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::Format(format!("non-finite value in {}", entry.name)));
            }
        }
        expected_offset = end;
    }
    if expected_offset != data.len() {
        return Err(Error::Length(format!("{} trailing bytes", data.len() - expected_offset)));
    }
    Ok(params)
}

pub fn save_params(params: &DenoiserParams<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_params(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<DenoiserParams<f32>> {
    decode_params(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
