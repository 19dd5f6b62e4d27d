//! Run manifests: a reproducibility envelope written next to every
//! command's outputs, recording what was read (with digests), what was
//! written, and the exact configuration. Manifests are diagnostics, not
//! primary outputs — they carry wall-clock time and are not expected to be
//! byte-identical between runs.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("digest mismatch for {path}: manifest says {recorded}, file is {actual}")]
    DigestMismatch { path: String, recorded: String, actual: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Resolved configuration, after defaults and flag parsing.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> io::Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn record_input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Re-reads every recorded input and checks its digest still matches.
    pub fn verify(&self) -> Result<(), ManifestError> {
        for input in &self.inputs {
            let actual = digest_file(Path::new(&input.path))?;
            if actual.sha256 != input.sha256 {
                return Err(ManifestError::DigestMismatch {
                    path: input.path.clone(),
                    recorded: input.sha256.clone(),
                    actual: actual.sha256,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_round_trip_and_detect_changes() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.txt");
        fs::write(&input, b"original").unwrap();

        let mut manifest = RunManifest::new("attack", 7, serde_json::json!({"epsilon": 0.05}));
        manifest.record_input(&input).unwrap();
        manifest.record_output(&dir.path().join("out.png"));
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();

        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded.command, "attack");
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.inputs, manifest.inputs);
        loaded.verify().unwrap();

        fs::write(&input, b"tampered").unwrap();
        assert!(matches!(
            loaded.verify(),
            Err(ManifestError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn sha256_matches_known_vector() {
        // SHA-256 of the empty string, a fixed public constant.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
