use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;
const LOCK_NAME: &str = ".planlab.lock";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

/// Provenance record written next to the artifacts of a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub command: String,
    pub config_hash: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Exclusive writer for one output directory. Holds a lockfile until
/// dropped and records every file it writes.
pub struct OutputDir {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl OutputDir {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        match OpenOptions::new().write(true).create_new(true).open(dir.join(LOCK_NAME)) {
            Ok(_) => Ok(Self {
                dir: dir.to_path_buf(),
                entries: Vec::new(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run",
                dir.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.entries.retain(|e| e.file != name);
        self.entries.push(ArtifactEntry {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes `manifest.json` listing everything written so far.
    pub fn finish(
        &mut self,
        command: &str,
        config_hash: &str,
        failure: Option<(&str, &Error)>,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            status: if failure.is_some() {
                RunStatus::Failed
            } else {
                RunStatus::Complete
            },
            failed_stage: failure.map(|(s, _)| s.to_string()),
            error: failure.map(|(_, e)| e.to_string()),
            artifacts: self.entries.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.dir.join(LOCK_NAME));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let a = OutputDir::open(tmp.path()).unwrap();
        assert!(OutputDir::open(tmp.path()).is_err());
        drop(a);
        assert!(OutputDir::open(tmp.path()).is_ok());
    }

    #[test]
    fn manifest_hashes_every_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::open(tmp.path()).unwrap();
        out.write("a.txt", b"abc").unwrap();
        out.write("a.txt", b"abc").unwrap();
        let err = Error::EmptyDataset;
        let m = out.finish("train", "h", Some(("dataset", &err))).unwrap();
        assert_eq!(m.artifacts.len(), 1);
        assert_eq!(
            m.artifacts[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m.status, RunStatus::Failed);
        assert_eq!(m.failed_stage.as_deref(), Some("dataset"));
        let back: Manifest =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
