//! Named-tensor checkpoints: a little-endian binary payload plus a JSON
//! manifest describing names, shapes and caller metadata.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::graph::{read_u32, read_u64};

const MAGIC: &[u8; 8] = b"DPIMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    /// SHA-256 of the binary payload.
    pub payload_sha256: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode_params(params: &Params) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(mut bytes: &[u8]) -> Result<Params> {
    let r = &mut bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint payload (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut params = Params::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(name, Tensor::matrix(rows, cols, data)?);
    }
    Ok(params)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Saves `<stem>.bin` and `<stem>.json`.
pub fn save_checkpoint(
    stem: &Path,
    params: &Params,
    metadata: serde_json::Value,
) -> Result<CheckpointManifest> {
    let payload = encode_params(params);
    let manifest = CheckpointManifest {
        format: "deepim-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        payload_sha256: sha256_hex(&payload),
        tensors: params
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: vec![t.rows(), t.cols()],
            })
            .collect(),
        metadata,
    };
    write_atomic(&stem.with_extension("bin"), &payload)?;
    write_atomic(
        &stem.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

pub fn load_checkpoint(stem: &Path) -> Result<(Params, CheckpointManifest)> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
    let payload = fs::read(stem.with_extension("bin"))?;
    let found = sha256_hex(&payload);
    if found != manifest.payload_sha256 {
        return Err(Error::StaleArtifact {
            path: stem.with_extension("bin"),
            expected: manifest.payload_sha256,
            found,
        });
    }
    let params = decode_params(&payload)?;
    for entry in &manifest.tensors {
        let t = params
            .get(&entry.name)
            .ok_or_else(|| Error::Format(format!("manifest lists missing tensor {}", entry.name)))?;
        if t.dims() != entry.shape {
            return Err(Error::Format(format!(
                "tensor {} has shape {:?}, manifest says {:?}",
                entry.name,
                t.dims(),
                entry.shape
            )));
        }
    }
    Ok((params, manifest))
}
