//! On-disk parameter sets: `<stem>.json` manifest plus `<stem>.bin`, the
//! little-endian concatenation of every tensor in manifest order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::TensorError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the data file.
    pub offset: u64,
    pub frozen: bool,
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub data_file: String,
    pub step: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".json")
}

pub fn data_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".bin")
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = with_suffix(path, ".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn encode<S: Scalar>(store: &ParamStore<S>, step: u64, config: serde_json::Value, data_file: &str) -> (CheckpointManifest, Vec<u8>) {
    let mut bytes = Vec::with_capacity(store.num_scalars() * S::BYTES);
    let mut tensors = Vec::with_capacity(store.len());
    for e in store.entries() {
        tensors.push(TensorRecord {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            dtype: S::DTYPE.to_string(),
            offset: bytes.len() as u64,
            frozen: e.frozen,
            decay: e.decay,
        });
        for &v in e.value.data() {
            v.write_le(&mut bytes);
        }
    }
    (CheckpointManifest { data_file: data_file.to_string(), step, config, tensors }, bytes)
}

pub fn decode<S: Scalar>(manifest: &CheckpointManifest, bytes: &[u8]) -> Result<ParamStore<S>, TensorError> {
    let mut store = ParamStore::new();
    for rec in &manifest.tensors {
        if rec.dtype != S::DTYPE {
            return Err(TensorError::Format(format!("tensor {} has dtype {}, expected {}", rec.name, rec.dtype, S::DTYPE)));
        }
        let n: usize = rec.shape.iter().product();
        let start = rec.offset as usize;
        let end = start + n * S::BYTES;
        let chunk = bytes.get(start..end).ok_or_else(|| TensorError::Format(format!("tensor {} overruns data file", rec.name)))?;
        let data: Vec<S> = chunk.chunks_exact(S::BYTES).map(S::read_le).collect();
        let t = Tensor::new(&rec.shape, data)?;
        if !t.is_finite() {
            return Err(TensorError::NonFinite(rec.name.clone()));
        }
        let id = store.insert(&rec.name, t, rec.decay)?;
        store.entry_mut(id).frozen = rec.frozen;
    }
    Ok(store)
}

pub fn save<S: Scalar>(store: &ParamStore<S>, step: u64, config: serde_json::Value, stem: &Path) -> Result<(), TensorError> {
    let data = data_path(stem);
    let data_name = data.file_name().and_then(|s| s.to_str()).unwrap_or("params.bin").to_string();
    let (manifest, bytes) = encode(store, step, config, &data_name);
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_atomic(&data, &bytes)?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| TensorError::Format(e.to_string()))?;
    write_atomic(&manifest_path(stem), &json)?;
    Ok(())
}

pub fn load<S: Scalar>(stem: &Path) -> Result<(ParamStore<S>, CheckpointManifest), TensorError> {
    let json = fs::read(manifest_path(stem))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&json).map_err(|e| TensorError::Format(e.to_string()))?;
    let dir = stem.parent().unwrap_or_else(|| Path::new("."));
    let bytes = fs::read(dir.join(&manifest.data_file))?;
    let store = decode(&manifest, &bytes)?;
    Ok((store, manifest))
}
