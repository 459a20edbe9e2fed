use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::ModelParameters;
use super::spec::ConvBlockSpec;

const MAGIC: &[u8; 8] = b"VSYNCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub seed: u64,
    pub blocks: BTreeMap<String, ConvBlockSpec>,
    pub arrays: Vec<ArrayEntry>,
    pub payload_sha256: String,
    /// Free-form model/run description stored alongside the weights.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Layout: magic, u32 version, u64 manifest length, JSON manifest, then the
/// little-endian f32 payload.
pub fn save_checkpoint(path: &Path, params: &ModelParameters, metadata: serde_json::Value) -> Result<()> {
    params.validate()?;
    let mut payload = Vec::with_capacity(params.param_count() * 4);
    let mut arrays = Vec::with_capacity(params.tensors.len());
    let mut offset = 0;
    for (name, t) in &params.tensors {
        arrays.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        for v in t.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        offset += t.len();
    }
    let manifest = CheckpointManifest {
        version: VERSION,
        seed: params.seed,
        blocks: params.blocks.clone(),
        arrays,
        payload_sha256: hex(&Sha256::digest(&payload)),
        metadata,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    f.write_all(&payload)?;
    f.flush()?;
    Ok(())
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint".into(),
        detail: detail.into(),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParameters, CheckpointManifest)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if mlen > body.len() {
        return Err(corrupt("truncated manifest"));
    }
    let manifest: CheckpointManifest =
        serde_json::from_slice(&body[..mlen]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let payload = &body[mlen..];
    if hex(&Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let mut params = ModelParameters::new(manifest.seed);
    params.blocks = manifest.blocks.clone();
    for a in &manifest.arrays {
        let n: usize = a.shape.iter().product();
        let (start, end) = (a.offset * 4, (a.offset + n) * 4);
        if end > payload.len() {
            return Err(corrupt(format!("array {} runs past the payload", a.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        params.tensors.insert(a.name.clone(), Tensor::from_vec(&a.shape, data)?);
    }
    params.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_blocks::ArchConfig;

    fn model() -> ModelParameters {
        let mut p = ModelParameters::new(5);
        p.add_block("decoder", ArchConfig::default().decoder(3), false).unwrap();
        p
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = model();
        save_checkpoint(&path, &p, serde_json::json!({"note": "x"})).unwrap();
        let (q, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m.metadata["note"], "x");
        assert_eq!(q.blocks, p.blocks);
        for (k, t) in &p.tensors {
            let r = q.get(k).unwrap();
            for (a, b) in t.data().iter().zip(r.data()) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
        // Reloaded weights are already f32-representable: a second save is
        // byte-identical.
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&path2, &q, serde_json::json!({"note": "x"})).unwrap();
        let (q2, _) = load_checkpoint(&path2).unwrap();
        assert_eq!(q2, q);
    }

    #[test]
    fn flipped_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model(), serde_json::Value::Null).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt { .. })));
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::MissingFile(_))));
    }
}
