//! Named-tensor archive: `MAGIC | u64 header length | JSON header | f32 LE data`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MSEGARC1";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor archive (bad magic)")]
    BadMagic,
    #[error("corrupt archive header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("tensor {name}: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} missing from archive")]
    Missing(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
}

/// Tensors read back from an archive, in stored order.
pub struct Archive {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, ParamKind, Tensor)>,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _, _)| n == name).map(|(_, _, t)| t)
    }

    /// Copies every tensor of `store` from the archive; names and shapes must match.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), ArchiveError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let t = self.get(&name).ok_or_else(|| ArchiveError::Missing(name.clone()))?;
            if t.shape() != store.get(id).shape() {
                return Err(ArchiveError::ShapeMismatch {
                    name,
                    expected: store.get(id).shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            store.set(id, t.clone());
        }
        Ok(())
    }
}

pub fn write_archive(mut w: impl Write, store: &ParamStore, metadata: &serde_json::Value) -> Result<(), ArchiveError> {
    let header = Header {
        metadata: metadata.clone(),
        tensors: store
            .ids()
            .map(|id| Entry {
                name: store.name(id).to_string(),
                kind: store.kind(id),
                shape: store.get(id).shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for id in store.ids() {
        buf.clear();
        for v in store.get(id).data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_archive(mut r: impl Read) -> Result<Archive, ArchiveError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(ArchiveError::Corrupt(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| ArchiveError::Corrupt(format!("truncated data for {}", e.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((e.name, e.kind, Tensor::from_vec(&e.shape, data)));
    }
    Ok(Archive {
        metadata: header.metadata,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let mut store = ParamStore::new();
        store.add("a", ParamKind::Trainable, Tensor::from_vec(&[2, 1], vec![1.5, -0.0]));
        store.add("b", ParamKind::Buffer, Tensor::from_vec(&[1], vec![f32::MIN_POSITIVE]));
        let meta = serde_json::json!({"k": 1});
        let mut bytes = Vec::new();
        write_archive(&mut bytes, &store, &meta).unwrap();
        let arc = read_archive(bytes.as_slice()).unwrap();
        assert_eq!(arc.metadata, meta);
        let mut other = store.clone();
        other.set(other.find("a").unwrap(), Tensor::zeros(&[2, 1]));
        arc.restore_into(&mut other).unwrap();
        for id in store.ids() {
            assert_eq!(store.get(id), other.get(id));
        }
    }

    #[test]
    fn truncated_archive_is_an_error() {
        let mut store = ParamStore::new();
        store.add("a", ParamKind::Trainable, Tensor::zeros(&[16]));
        let mut bytes = Vec::new();
        write_archive(&mut bytes, &store, &serde_json::Value::Null).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_archive(bytes.as_slice()), Err(ArchiveError::Corrupt(_))));
        assert!(matches!(read_archive(&b"garbage!garbage!"[..]), Err(ArchiveError::BadMagic)));
    }
}
