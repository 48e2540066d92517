//! Hashed output directories and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a run did and what it produced, enough to rerun it.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Fully resolved configuration and input paths.
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of every input read (keyed by path as given) and every output
    /// written (keyed relative to the output directory).
    pub artifacts: BTreeMap<String, String>,
}

/// Writes files under a root directory, hashing each one.
pub struct OutputDir {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutputDir { root, artifacts: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (forward slashes) under the root.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Records an input's hash under `key`.
    pub fn record_input(&mut self, key: String, bytes: &[u8]) {
        self.artifacts.insert(key, sha256_hex(bytes));
    }

    /// Writes `manifest.json` covering everything recorded so far.
    pub fn finish(mut self, command: &str, config: serde_json::Value, seed: u64) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            artifacts: std::mem::take(&mut self.artifacts),
        };
        self.write_json(MANIFEST_FILE, &manifest)?;
        Ok(manifest)
    }
}

/// Reads a file, recording its hash when `out` is given.
pub fn read_input(path: &Path, out: Option<&mut OutputDir>) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(out) = out {
        out.record_input(format!("input:{}", path.display()), &bytes);
    }
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_outputs_and_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path().join("run")).unwrap();
        out.write("a/b.txt", b"hello").unwrap();
        out.record_input("input:x".into(), b"in");
        let m = out.finish("test", serde_json::json!({}), 7).unwrap();
        assert_eq!(m.artifacts["a/b.txt"], sha256_hex(b"hello"));
        assert_eq!(m.artifacts["input:x"], sha256_hex(b"in"));
        assert!(dir.path().join("run/manifest.json").exists());
        assert_eq!(std::fs::read(dir.path().join("run/a/b.txt")).unwrap(), b"hello");
    }
}
