use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autograd::checkpoint::{sha256_hex, write_atomic};
use crate::error::{Error, Result};

use super::Stage;

pub const MANIFEST_VERSION: u32 = 1;

/// What a stage consumed and produced. Deterministic: wall times live in a
/// separate sidecar (see [`Workspace::write_timing`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub version: u32,
    /// Master seed and the seed this stage drew from.
    pub seed: u64,
    pub stage_seed: u64,
    /// Hash of the config sections this stage depends on.
    pub config_fingerprint: String,
    /// Artifact path (relative to the run directory) to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub extra: Value,
}

/// A run directory: artifacts plus `manifests/` and `timings/`.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.root.join("manifests").join(format!("{}.json", stage.name()))
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(&path, bytes)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        Ok(serde_json::from_slice(&fs::read(self.path(rel))?)?)
    }

    /// Hashes the listed artifacts for a manifest.
    pub fn hashes(&self, rels: &[String]) -> Result<BTreeMap<String, String>> {
        rels.iter()
            .map(|r| Ok((r.clone(), hash_file(&self.path(r))?)))
            .collect()
    }

    pub fn write_manifest(&self, stage: Stage, manifest: &StageManifest) -> Result<()> {
        self.write_json(&format!("manifests/{}.json", stage.name()), manifest)
    }

    pub fn write_timing(&self, stage: Stage, timing: &Value) -> Result<()> {
        self.write_json(&format!("timings/{}.json", stage.name()), timing)
    }

    pub fn read_timing(&self, stage: Stage) -> Option<Value> {
        self.read_json(&format!("timings/{}.json", stage.name())).ok()
    }

    /// Loads the manifest of an upstream stage and checks it against the
    /// current configuration and the files on disk.
    pub fn require(&self, stage: Stage, fingerprint: &str) -> Result<StageManifest> {
        let path = self.manifest_path(stage);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                stage: stage.name(),
            });
        }
        let m: StageManifest = serde_json::from_slice(&fs::read(&path)?)?;
        if m.config_fingerprint != fingerprint {
            return Err(Error::StaleArtifact {
                path,
                expected: m.config_fingerprint,
                found: fingerprint.to_string(),
            });
        }
        for (rel, expected) in m.outputs.iter().chain(&m.inputs) {
            let file = self.path(rel);
            if !file.exists() {
                return Err(Error::MissingArtifact { path: file, stage: stage.name() });
            }
            let found = hash_file(&file)?;
            if &found != expected {
                return Err(Error::StaleArtifact {
                    path: file,
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(outputs: BTreeMap<String, String>) -> StageManifest {
        StageManifest {
            stage: "gen-graph".into(),
            version: MANIFEST_VERSION,
            seed: 1,
            stage_seed: 2,
            config_fingerprint: "abc".into(),
            inputs: BTreeMap::new(),
            outputs,
            extra: Value::Null,
        }
    }

    #[test]
    fn require_detects_missing_stale_and_edited_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        let err = ws.require(Stage::GenGraph, "abc").unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { stage: "gen-graph", .. }));

        ws.write_bytes("graph.bin", b"edges").unwrap();
        let outs = ws.hashes(&["graph.bin".to_string()]).unwrap();
        ws.write_manifest(Stage::GenGraph, &manifest(outs)).unwrap();
        assert!(ws.require(Stage::GenGraph, "abc").is_ok());
        assert!(matches!(
            ws.require(Stage::GenGraph, "other").unwrap_err(),
            Error::StaleArtifact { .. }
        ));

        ws.write_bytes("graph.bin", b"edited").unwrap();
        assert!(matches!(
            ws.require(Stage::GenGraph, "abc").unwrap_err(),
            Error::StaleArtifact { .. }
        ));
        std::fs::remove_file(ws.path("graph.bin")).unwrap();
        assert!(matches!(
            ws.require(Stage::GenGraph, "abc").unwrap_err(),
            Error::MissingArtifact { .. }
        ));
    }
}
