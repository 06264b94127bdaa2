//! Model persistence.
//!
//! Layout: the magic line `UMPS1\n`, one line of JSON manifest, then the raw
//! little-endian `f64` payload of every parameter tensor in manifest order.
//! Tensor offsets count bytes from the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bags::CancerType;
use crate::error::{Error, Result};
use crate::model::{Model, TrainConfig};

pub const MAGIC: &[u8] = b"UMPS1\n";
pub const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: TrainConfig,
    pub d_patch: usize,
    pub cancer_types: Vec<CancerType>,
    pub bin_edges: Vec<f64>,
    pub tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(model.store.len());
    let mut offset = 0;
    for (name, t) in model.store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: DTYPE.to_string(),
            offset,
        });
        offset += t.len() * 8;
    }
    let manifest = Manifest {
        config: model.config.clone(),
        d_patch: model.d_patch,
        cancer_types: model.cancer_types.clone(),
        bin_edges: model.bin_edges.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|source| Error::Json {
        context: "checkpoint manifest".into(),
        source,
    })?;
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    for (_, t) in model.store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint. The architecture is rebuilt from the stored config
/// and every stored tensor must match it by name, order and shape.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing UMPS1 header"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&rest[..nl]).map_err(|source| Error::Json {
        context: "checkpoint manifest".into(),
        source,
    })?;
    let payload = &rest[nl + 1..];
    let mut model = Model::new(manifest.config, manifest.d_patch, manifest.cancer_types, manifest.bin_edges)
        .map_err(|e| bad(format!("stored configuration is invalid: {e}")))?;
    if manifest.tensors.len() != model.store.len() {
        return Err(bad(format!(
            "{} tensors stored, configuration defines {}",
            manifest.tensors.len(),
            model.store.len()
        )));
    }
    let mut expected_offset = 0;
    for (i, (entry, id)) in manifest.tensors.iter().zip(model.store.ids().collect::<Vec<_>>()).enumerate() {
        let name = model.store.name(id);
        if entry.name != name {
            return Err(bad(format!("tensor {i} is `{}`, expected `{name}`", entry.name)));
        }
        let t = model.store.get_mut(id);
        if entry.shape != t.shape() {
            return Err(bad(format!(
                "tensor `{}` has shape {:?}, configuration expects {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        if entry.dtype != DTYPE {
            return Err(bad(format!("tensor `{}` has dtype {}, expected {DTYPE}", entry.name, entry.dtype)));
        }
        if entry.offset != expected_offset {
            return Err(bad(format!("tensor `{}` offset {} is not {expected_offset}", entry.name, entry.offset)));
        }
        let end = entry.offset + t.len() * 8;
        let raw = payload
            .get(entry.offset..end)
            .ok_or_else(|| bad(format!("payload truncated in tensor `{}`", entry.name)))?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("chunks of eight bytes"));
        }
        expected_offset = end;
    }
    if payload.len() != expected_offset {
        return Err(bad(format!(
            "payload has {} bytes, manifest describes {expected_offset}",
            payload.len()
        )));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
