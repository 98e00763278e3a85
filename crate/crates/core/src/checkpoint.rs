//! Single-file parameter archive.
//!
//! Layout: the magic line `WGCKPT1\n`, a little-endian `u64` header length,
//! a JSON header, then every tensor as raw little-endian `f32` in header
//! order. Loading rebuilds the encoder layout from the stored config and
//! checks every tensor name and shape against it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"WGCKPT1\n";

/// Everything besides the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    /// Softmax temperature in effect when the checkpoint was taken.
    pub temperature: f64,
    pub epoch: usize,
    pub val_top1: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(meta: &CheckpointMeta, store: &ParamStore) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for id in store.ids() {
        let t = store.value(id);
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let header = serde_json::to_vec(&Header { meta: meta.clone(), tensors }).map_err(|e| Error::json("checkpoint header", e))?;
    let mut out = Vec::with_capacity(16 + header.len() + offset * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for id in store.ids() {
        for &v in store.value(id).data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], source: &str) -> Result<(Encoder, ParamStore, CheckpointMeta)> {
    let bad = |m: String| Error::format(source, m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| bad(format!("header length {hlen} exceeds file size {}", bytes.len())))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    let blob = &bytes[16 + hlen..];
    let (encoder, mut store) = Encoder::init(header.meta.encoder.clone(), 0)?;
    if header.tensors.len() != store.len() {
        return Err(bad(format!(
            "checkpoint holds {} tensors, the configured encoder has {}",
            header.tensors.len(),
            store.len()
        )));
    }
    for entry in &header.tensors {
        let id = store
            .id(&entry.name)
            .ok_or_else(|| bad(format!("unexpected tensor `{}`", entry.name)))?;
        if store.value(id).shape() != entry.shape.as_slice() {
            return Err(bad(format!(
                "tensor `{}` has shape {:?}, expected {:?}",
                entry.name,
                entry.shape,
                store.value(id).shape()
            )));
        }
        let raw = blob
            .get(entry.offset * 4..(entry.offset + entry.len) * 4)
            .ok_or_else(|| bad(format!("tensor `{}` runs past the end of the file", entry.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        store.set(id, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok((encoder, store, header.meta))
}

pub fn save(path: impl AsRef<Path>, meta: &CheckpointMeta, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(meta, store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Encoder, ParamStore, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, &path.display().to_string())
}
