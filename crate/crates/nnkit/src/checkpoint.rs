//! Checkpoint persistence.
//!
//! A checkpoint is two files sharing a prefix:
//!
//! * `<prefix>.json` — the manifest: for each tensor its name, shape,
//!   element type (`"f32"` or `"f64"`), byte offset into the blob, and
//!   element count, in serialization order.
//! * `<prefix>.bin` — one raw blob of all tensor data, each element stored
//!   little-endian, tensors packed back to back in manifest order.
//!
//! Loading restores every tensor bit-exactly, so a training run serialized
//! mid-flight (parameters, momentum buffers, BN statistics, frozen bounds)
//! resumes with identical arithmetic.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset_bytes: u64,
    pub num_elements: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub blob_file: String,
    pub tensors: Vec<ManifestEntry>,
}

fn paths(prefix: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    (
        prefix.with_extension("json"),
        prefix.with_extension("bin"),
    )
}

/// Write `entries` to `<prefix>.json` + `<prefix>.bin`.
pub fn save<E: Scalar>(prefix: &Path, entries: &[(String, &Tensor<E>)]) -> Result<(), NnError> {
    let (manifest_path, blob_path) = paths(prefix);
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(entries.len());
    for (name, t) in entries {
        tensors.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: E::DTYPE.to_string(),
            offset_bytes: blob.len() as u64,
            num_elements: t.numel() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let manifest = Manifest {
        blob_file: blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint.bin".into()),
        tensors,
    };
    if let Some(dir) = manifest_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest json"))?;
    fs::write(&blob_path, blob)?;
    Ok(())
}

/// Read every tensor back from `<prefix>.json` + `<prefix>.bin`.
pub fn load<E: Scalar>(prefix: &Path) -> Result<Vec<(String, Tensor<E>)>, NnError> {
    let (manifest_path, blob_path) = paths(prefix);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| NnError::Checkpoint(format!("bad manifest: {e}")))?;
    let blob = fs::read(&blob_path)?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.dtype != E::DTYPE {
            return Err(NnError::Checkpoint(format!(
                "tensor {} has dtype {}, expected {}",
                entry.name,
                entry.dtype,
                E::DTYPE
            )));
        }
        let start = entry.offset_bytes as usize;
        let len = entry.num_elements as usize;
        let end = start + len * E::BYTE_WIDTH;
        if end > blob.len() {
            return Err(NnError::Checkpoint(format!(
                "tensor {} extends past blob end ({} > {})",
                entry.name,
                end,
                blob.len()
            )));
        }
        let data: Vec<E> = blob[start..end]
            .chunks_exact(E::BYTE_WIDTH)
            .map(E::read_le)
            .collect();
        out.push((entry.name.clone(), Tensor::from_vec(&entry.shape, data)?));
    }
    Ok(out)
}
