//! Single-file parameter checkpoints.
//!
//! Layout: one line of JSON (the manifest: schema version, training step,
//! hyperparameters, parameter names/shapes in order), a newline, then the raw
//! little-endian f64 buffers concatenated in manifest order.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::tensor::Tensor;
use crate::error::{FbmError, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    kind: String,
    step: u64,
    hyper: serde_json::Value,
    params: Vec<ParamEntry>,
}

pub fn save(
    path: &Path,
    params: &ParamSet,
    hyper: &serde_json::Value,
    step: u64,
) -> Result<()> {
    let manifest = Manifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        kind: "fbm-checkpoint".to_string(),
        step,
        hyper: hyper.clone(),
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                rows: p.tensor.rows(),
                cols: p.tensor.cols(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    for p in params.iter() {
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamSet, serde_json::Value, u64)> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FbmError::Format("checkpoint has no manifest line".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..newline])?;
    if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(FbmError::Format(format!(
            "unsupported checkpoint schema version {}",
            manifest.schema_version
        )));
    }
    let mut at = newline + 1;
    let mut params = ParamSet::new();
    for entry in &manifest.params {
        let n = entry.rows * entry.cols;
        let end = at + n * 8;
        if end > bytes.len() {
            return Err(FbmError::Format(format!(
                "checkpoint truncated while reading '{}'",
                entry.name
            )));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in bytes[at..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        at = end;
        let tensor = Tensor::from_vec(entry.rows, entry.cols, data);
        if entry.trainable {
            params.add(&entry.name, tensor)?;
        } else {
            params.add_frozen(&entry.name, tensor)?;
        }
    }
    Ok((params, manifest.hyper, manifest.step))
}
