//! Checkpoint container.
//!
//! Layout: one version byte, a little-endian `u32` header length, a JSON
//! header, then the raw little-endian payload. The header lists each
//! parameter's name, shape, dtype and byte range within the payload, together
//! with a hash of the model configuration and the global step.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub global_step: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn config_hash(config_json: &str) -> String {
    hex::encode(Sha256::digest(config_json.as_bytes()))
}

pub fn to_bytes<T: Scalar>(
    store: &ParamStore<T>,
    config_hash: &str,
    global_step: u64,
    meta: serde_json::Value,
) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        let offset = payload.len();
        for &x in p.value.data() {
            x.write_le(&mut payload);
        }
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: T::DTYPE,
            offset,
            bytes: payload.len() - offset,
        });
    }
    let header = CheckpointHeader {
        config_hash: config_hash.to_string(),
        global_step,
        meta,
        tensors,
    };
    let hjson = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(5 + hjson.len() + payload.len());
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let version = *bytes.first().ok_or_else(|| NumericsError::Checkpoint("empty file".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(NumericsError::Checkpoint(format!("unsupported version {version}")));
    }
    if bytes.len() < 5 {
        return Err(NumericsError::Checkpoint("truncated header".into()));
    }
    let hlen = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let hend = 5 + hlen;
    if bytes.len() < hend {
        return Err(NumericsError::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[5..hend])?;
    Ok((header, &bytes[hend..]))
}

pub fn read_header_bytes(bytes: &[u8]) -> Result<CheckpointHeader> {
    split(bytes).map(|(h, _)| h)
}

/// Loads every stored tensor into the parameter of the same name, converting
/// precision if needed. Every parameter of `store` must be present.
pub fn from_bytes<T: Scalar>(bytes: &[u8], store: &mut ParamStore<T>) -> Result<CheckpointHeader> {
    let (header, payload) = split(bytes)?;
    let mut seen = vec![false; store.len()];
    for e in &header.tensors {
        let id = store
            .id_of(&e.name)
            .ok_or_else(|| NumericsError::UnknownParameter(e.name.clone()))?;
        let p = store.get_mut(id);
        if p.value.shape() != e.shape.as_slice() {
            return Err(NumericsError::Checkpoint(format!(
                "`{}` has shape {:?} in the checkpoint but {:?} in the model",
                e.name,
                e.shape,
                p.value.shape()
            )));
        }
        let end = e.offset + e.bytes;
        if end > payload.len() {
            return Err(NumericsError::Checkpoint(format!("`{}` runs past the payload", e.name)));
        }
        let raw = &payload[e.offset..end];
        let width = e.dtype.size();
        let data: Vec<T> = match e.dtype {
            DType::F32 => raw.chunks(width).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks(width).map(|c| T::lit(f64::read_le(c))).collect(),
        };
        p.value = Tensor::new(&e.shape, data)?;
        p.moments = None;
        seen[id.index()] = true;
    }
    if let Some((i, _)) = seen.iter().enumerate().find(|(_, s)| !**s) {
        let name = store.iter().nth(i).map(|(_, p)| p.name.clone()).unwrap_or_default();
        return Err(NumericsError::Checkpoint(format!("missing parameter `{name}`")));
    }
    Ok(header)
}

pub fn save<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    config_hash: &str,
    global_step: u64,
    meta: serde_json::Value,
) -> Result<()> {
    std::fs::write(path, to_bytes(store, config_hash, global_step, meta)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes, store)
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path)?;
    read_header_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::from_f64(&[2, 2], &[1.0, -2.0, 3.5, 0.25]).unwrap(), true)
            .unwrap();
        s.add("a.b", Tensor::from_f64(&[2], &[0.5, 7.0]).unwrap(), false).unwrap();
        s
    }

    #[test]
    fn round_trip_and_header() {
        let s = store();
        let bytes = to_bytes(&s, "abc", 42, serde_json::json!({"stage": "1a"})).unwrap();
        assert_eq!(bytes[0], CHECKPOINT_VERSION);
        let mut t = store();
        for id in t.ids().collect::<Vec<_>>() {
            t.get_mut(id).value.data_mut().fill(0.0);
        }
        let h = from_bytes(&bytes, &mut t).unwrap();
        assert_eq!(h.global_step, 42);
        assert_eq!(h.config_hash, "abc");
        for (id, p) in s.iter() {
            assert_eq!(p.value, t.get(id).value);
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = to_bytes(&store(), "x", 0, serde_json::Value::Null).unwrap();
        bytes[0] = 9;
        let err = from_bytes(&bytes, &mut store()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let bytes = to_bytes(&store(), "x", 0, serde_json::Value::Null).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.add("a.w", Tensor::zeros(&[4]), true).unwrap();
        other.add("a.b", Tensor::zeros(&[2]), false).unwrap();
        assert!(from_bytes(&bytes, &mut other).is_err());
    }

    #[test]
    fn converts_precision() {
        let bytes = to_bytes(&store(), "x", 0, serde_json::Value::Null).unwrap();
        let mut wide = store().cast::<f64>();
        from_bytes(&bytes, &mut wide).unwrap();
        assert_eq!(wide.value(wide.id_of("a.w").unwrap()).data()[1], -2.0);
    }
}
