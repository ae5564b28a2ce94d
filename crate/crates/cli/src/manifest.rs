//! Per-run provenance record.
//!
//! Written atomically (temp file + rename) before any real work starts, so a
//! crashed run still leaves behind what it was asked to do.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use realign::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Fully resolved configuration, after preset and flag application.
    pub config: serde_json::Value,
    /// SHA-256 of every input file the run consumes.
    pub input_hashes: BTreeMap<String, String>,
    /// Files the run promises to produce, relative to the run directory.
    pub output_paths: Vec<PathBuf>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Config(format!("cannot hash input {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn write(&self, run_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(RUN_MANIFEST_FILE);
        let tmp = run_dir.join(format!(".{RUN_MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lands_atomically_with_no_temp_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "curate".into(),
            tool_version: "0.0.0".into(),
            seed: 7,
            config: serde_json::json!({}),
            input_hashes: BTreeMap::new(),
            output_paths: vec![PathBuf::from("dataset_manifest.json")],
        };
        let path = m.write(dir.path()).unwrap();
        assert!(path.exists());
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with('.'))
            .collect();
        assert!(leftovers.is_empty());
    }
}
