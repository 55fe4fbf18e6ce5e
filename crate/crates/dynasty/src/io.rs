//! Manifest + blob persistence shared by checkpoints, datasets and raw
//! series archives.
//!
//! An artifact is a directory holding `manifest.json` and `data.bin`. The
//! manifest lists named tensors with shapes and byte offsets; the blob is
//! their concatenated raw little-endian 64-bit floats in manifest order.
//! Round trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{DynastyError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "data.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `data.bin`.
    pub offset: u64,
    pub num_values: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    #[serde(default)]
    extra: serde_json::Map<String, Value>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug)]
pub struct LoadedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug)]
pub struct LoadedArchive {
    pub format: String,
    pub extra: serde_json::Map<String, Value>,
    pub tensors: Vec<LoadedTensor>,
}

impl LoadedArchive {
    pub fn tensor(&self, name: &str) -> Result<&LoadedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| DynastyError::Format(format!("archive has no tensor named `{name}`")))
    }
}

/// Write an archive directory. `tensors` order defines blob layout.
pub fn write_archive(
    dir: &Path,
    format: &str,
    extra: serde_json::Map<String, Value>,
    tensors: &[(String, Vec<usize>, &[f64])],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, shape, values) in tensors {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(DynastyError::Format(format!(
                "tensor `{name}`: shape {shape:?} implies {numel} values, got {}",
                values.len()
            )));
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            dtype: "f64le".into(),
            offset: blob.len() as u64,
            num_values: values.len() as u64,
        });
        for v in *values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { format: format.into(), extra, tensors: entries };
    let mut mf = fs::File::create(dir.join(MANIFEST_FILE))?;
    mf.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    mf.write_all(b"\n")?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

/// Read an archive directory written by [`write_archive`].
pub fn read_archive(dir: &Path) -> Result<LoadedArchive> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let mut blob = Vec::new();
    fs::File::open(dir.join(BLOB_FILE))?.read_to_end(&mut blob)?;

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.dtype != "f64le" {
            return Err(DynastyError::Format(format!(
                "tensor `{}` has unsupported dtype `{}`",
                e.name, e.dtype
            )));
        }
        let start = e.offset as usize;
        let end = start + (e.num_values as usize) * 8;
        if end > blob.len() {
            return Err(DynastyError::Format(format!(
                "tensor `{}` extends past the end of {BLOB_FILE}",
                e.name
            )));
        }
        let numel: usize = e.shape.iter().product();
        if numel != e.num_values as usize {
            return Err(DynastyError::Format(format!(
                "tensor `{}`: shape {:?} inconsistent with {} stored values",
                e.name, e.shape, e.num_values
            )));
        }
        let values: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push(LoadedTensor { name: e.name.clone(), shape: e.shape.clone(), values });
    }
    Ok(LoadedArchive { format: manifest.format, extra: manifest.extra, tensors })
}
