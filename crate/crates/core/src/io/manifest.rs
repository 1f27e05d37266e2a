use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    /// SHA-256 of the git blob encoding `blob <len>\0<content>`, hex.
    pub blob: String,
}

/// Record of one command invocation: what was asked for, what was written
/// and what came out. Contains no timestamps, so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Every parameter of the run in text form, e.g. all config keys.
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
    pub metrics: BTreeMap<String, f64>,
    /// SHA-256 of a git-style tree over `outputs`.
    pub content_hash: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn blob_hash(content: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().into()
}

/// Hash of the tree object whose entries are `100644 <path>\0<blob hash>`,
/// sorted by path.
pub fn tree_hash(outputs: &[OutputFile]) -> Result<String> {
    let mut entries: Vec<&OutputFile> = outputs.iter().collect();
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let mut body = Vec::new();
    for e in entries {
        let raw: Vec<u8> = (0..e.blob.len())
            .step_by(2)
            .map(|i| e.blob.get(i..i + 2).and_then(|s| u8::from_str_radix(s, 16).ok()))
            .collect::<Option<_>>()
            .filter(|v: &Vec<u8>| v.len() == 32)
            .ok_or_else(|| Error::invalid(format!("bad blob hash for {}", e.path)))?;
        body.extend_from_slice(format!("100644 {}\0", e.path).as_bytes());
        body.extend_from_slice(&raw);
    }
    let mut h = Sha256::new();
    h.update(format!("tree {}\0", body.len()).as_bytes());
    h.update(&body);
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config,
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
            content_hash: String::new(),
        }
    }

    /// Hashes the named files under `dir` and refreshes `content_hash`.
    pub fn record_outputs(&mut self, dir: &Path, paths: &[String]) -> Result<()> {
        let mut outputs = Vec::with_capacity(paths.len());
        for rel in paths {
            let full = dir.join(rel);
            let content = fs::read(&full).map_err(|e| Error::io(&full, e))?;
            outputs.push(OutputFile {
                path: rel.replace('\\', "/"),
                bytes: content.len() as u64,
                blob: hex(&blob_hash(&content)),
            });
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.content_hash = tree_hash(&outputs)?;
        self.outputs = outputs;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        // `git hash-object --object-format=sha256` of an empty file.
        assert_eq!(
            hex(&blob_hash(b"")),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.csv"), "x\n1\n").unwrap();
        fs::write(dir.path().join("a.pfm"), [1u8, 2, 3]).unwrap();
        let mut m = RunManifest::new("train", 7, [("sigma".to_string(), "0.5".to_string())].into());
        m.metrics.insert("epe".into(), 0.1 + 0.2);
        m.record_outputs(dir.path(), &["b.csv".into(), "a.pfm".into()]).unwrap();
        assert_eq!(m.outputs[0].path, "a.pfm");
        let back = RunManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), m.to_json().unwrap());
        let mut changed = m.clone();
        fs::write(dir.path().join("a.pfm"), [1u8, 2, 4]).unwrap();
        changed
            .record_outputs(dir.path(), &["b.csv".into(), "a.pfm".into()])
            .unwrap();
        assert_ne!(changed.content_hash, m.content_hash);
    }
}
