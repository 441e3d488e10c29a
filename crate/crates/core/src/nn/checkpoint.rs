//! Single-file model container.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, JSON header, then
//! every parameter as little-endian `f32` in header order. The header carries
//! an architecture hash over the architecture description and the parameter
//! signature; loading fails when the recomputed hash disagrees.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AVNCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model family, e.g. `detector` or `classifier`.
    pub kind: String,
    /// Head/task tag, e.g. `stage`.
    pub tag: String,
    pub arch: serde_json::Value,
    pub arch_hash: String,
    pub seed: u64,
    /// Family-specific configuration (anchor grid for detectors).
    #[serde(default)]
    pub extra: serde_json::Value,
    pub params: Vec<ParamMeta>,
}

impl CheckpointHeader {
    pub fn compute_hash(kind: &str, arch: &serde_json::Value, store_signature: &str) -> String {
        let mut h = Sha256::new();
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(arch.to_string().as_bytes());
        h.update([0]);
        h.update(store_signature.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn signature_of(params: &[ParamMeta]) -> String {
    let mut store = ParamStore::new();
    for p in params {
        let n = p.shape.iter().product();
        store.add(p.name.clone(), p.shape.clone(), p.trainable, vec![0.0; n]);
    }
    store.signature()
}

pub fn write_checkpoint(
    path: &Path,
    kind: &str,
    tag: &str,
    arch: serde_json::Value,
    seed: u64,
    extra: serde_json::Value,
    store: &ParamStore,
) -> Result<()> {
    let arch_hash = CheckpointHeader::compute_hash(kind, &arch, &store.signature());
    let header = CheckpointHeader {
        kind: kind.to_string(),
        tag: tag.to_string(),
        arch,
        arch_hash,
        seed,
        extra,
        params: store
            .params()
            .iter()
            .map(|p| ParamMeta { name: p.name.clone(), shape: p.shape.clone(), trainable: p.trainable })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + header_bytes.len() + store.num_values() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for p in store.params() {
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a checkpoint, verifying magic, length and architecture hash.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamStore)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let expected = CheckpointHeader::compute_hash(&header.kind, &header.arch, &signature_of(&header.params));
    if expected != header.arch_hash {
        return Err(Error::ArchitectureMismatch(format!(
            "{}: stored hash {} does not match recomputed {}",
            path.display(),
            header.arch_hash,
            expected
        )));
    }
    let mut offset = 12 + hlen;
    let mut store = ParamStore::new();
    for meta in &header.params {
        let n: usize = meta.shape.iter().product();
        let raw = bytes
            .get(offset..offset + n * 4)
            .ok_or_else(|| Error::Checkpoint(format!("truncated data for {}", meta.name)))?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        store.add(meta.name.clone(), meta.shape.clone(), meta.trainable, values);
        offset += n * 4;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
    }
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut store = ParamStore::new();
        store.add("a.weight", vec![2, 2], true, vec![1.0, 2.0, 3.0, 4.5]);
        store.add("a.running_var", vec![1], false, vec![0.25]);
        let arch = serde_json::json!({"width": 8});
        write_checkpoint(&path, "classifier", "side", arch.clone(), 7, serde_json::Value::Null, &store).unwrap();
        let (header, back) = read_checkpoint(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(header.seed, 7);
        assert_eq!(header.tag, "side");

        // Rewrite the header with a different architecture but the old hash.
        let bytes = std::fs::read(&path).unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut h: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        h.arch = serde_json::json!({"width": 16});
        let hb = serde_json::to_vec(&h).unwrap();
        let mut tampered = CHECKPOINT_MAGIC.to_vec();
        tampered.extend_from_slice(&(hb.len() as u32).to_le_bytes());
        tampered.extend_from_slice(&hb);
        tampered.extend_from_slice(&bytes[12 + hlen..]);
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::ArchitectureMismatch(_))));
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"hello world, not a model").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
