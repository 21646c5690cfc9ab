//! Output stages: every command writes a complete directory next to its
//! destination and swaps it in with a rename, so a reader sees either the old
//! stage or the new one.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::error::CliError;

pub struct Stage {
    tmp: TempDir,
    target: PathBuf,
    files: Vec<PathBuf>,
}

impl Stage {
    pub fn new(target: impl Into<PathBuf>) -> Result<Self, CliError> {
        let target = target.into();
        let parent = parent_of(&target);
        fs::create_dir_all(&parent).map_err(CliError::io(&parent))?;
        let tmp = tempfile::Builder::new()
            .prefix(".efl-stage-")
            .tempdir_in(&parent)
            .map_err(CliError::io(&parent))?;
        Ok(Self {
            tmp,
            target,
            files: Vec::new(),
        })
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    /// Writes `contents` to `name` (a path relative to the stage root).
    pub fn write(&mut self, name: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.tmp.path().join(name.as_ref());
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        fs::write(&path, contents).map_err(CliError::io(&path))?;
        self.files.push(name.as_ref().to_path_buf());
        Ok(())
    }

    /// Adds `manifest.json` and moves the stage into place, replacing any
    /// previous version of it.
    pub fn commit(mut self, manifest: Manifest) -> Result<PathBuf, CliError> {
        let mut files = Vec::new();
        for name in &self.files {
            let bytes = fs::read(self.tmp.path().join(name)).map_err(CliError::io(name))?;
            files.push(FileEntry {
                path: name.to_string_lossy().replace('\\', "/"),
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = ManifestFile {
            tool: "efl",
            version: env!("CARGO_PKG_VERSION"),
            command: manifest.command,
            config_sha256: manifest.config_sha256,
            config: manifest.config,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        self.write("manifest.json", json + "\n")?;

        let parent = parent_of(&self.target);
        let built = self.tmp.keep();
        let old = if self.target.exists() {
            let holder = tempfile::Builder::new()
                .prefix(".efl-old-")
                .tempdir_in(&parent)
                .map_err(CliError::io(&parent))?
                .keep();
            let old = holder.join("stage");
            fs::rename(&self.target, &old).map_err(CliError::io(&self.target))?;
            Some(holder)
        } else {
            None
        };
        fs::rename(&built, &self.target).map_err(CliError::io(&self.target))?;
        if let Some(holder) = old {
            fs::remove_dir_all(&holder).map_err(CliError::io(&holder))?;
        }
        Ok(self.target)
    }
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// What a command records about itself.
pub struct Manifest {
    pub command: &'static str,
    pub config_sha256: Option<String>,
    pub config: serde_json::Value,
}

#[derive(Serialize)]
struct ManifestFile {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_sha256: Option<String>,
    config: serde_json::Value,
    created_unix: u64,
    files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

/// Errors with [`CliError::MissingArtifact`] unless `path` exists.
pub fn require(path: &Path, producer: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest {
            command: "test",
            config_sha256: None,
            config: serde_json::Value::Null,
        }
    }

    #[test]
    fn commit_replaces_previous_stage() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("a/b");
        let mut s = Stage::new(&target).unwrap();
        s.write("x.csv", "1\n").unwrap();
        s.write("nested/y.csv", "2\n").unwrap();
        s.commit(manifest()).unwrap();
        assert_eq!(fs::read_to_string(target.join("nested/y.csv")).unwrap(), "2\n");

        let mut s = Stage::new(&target).unwrap();
        s.write("z.csv", "3\n").unwrap();
        s.commit(manifest()).unwrap();
        assert!(!target.join("x.csv").exists());
        assert!(target.join("z.csv").exists());
        let leftovers: Vec<_> = fs::read_dir(root.path().join("a")).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn dropped_stage_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        {
            let mut s = Stage::new(&target).unwrap();
            s.write("x.csv", "1\n").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn manifest_lists_hashes() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("s");
        let mut s = Stage::new(&target).unwrap();
        s.write("a.csv", "abc").unwrap();
        s.commit(manifest()).unwrap();
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(target.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(
            m["files"][0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn missing_artifacts_are_named() {
        let err = require(Path::new("nowhere/model.txt"), "train").unwrap_err();
        assert!(err.to_string().contains("nowhere/model.txt"));
        assert_eq!(err.exit_code(), 1);
    }
}
