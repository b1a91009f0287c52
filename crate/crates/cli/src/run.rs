//! Run manifests: what a command produced and whether it finished.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory when inside it.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<(String, u64)> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok((digest.iter().map(|b| format!("{b:02x}")).collect(), bytes.len() as u64))
}

/// Artifact bookkeeping for one command invocation.
#[derive(Debug)]
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn start(dir: &Path, command: &str) -> anyhow::Result<Run> {
        std::fs::create_dir_all(dir).map_err(|source| radreg_core::Error::UnwritableOutputDir {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                run_id: uuid::Uuid::new_v4().to_string(),
                command: command.to_string(),
                config: serde_json::Value::Null,
                artifacts: Vec::new(),
                complete: false,
                error: None,
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn set_config(&mut self, config: &impl Serialize) -> anyhow::Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    /// Hashes an existing file and lists it in the manifest.
    pub fn record(&mut self, path: &Path) -> anyhow::Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        let rel = path.strip_prefix(&self.dir).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf());
        self.manifest.artifacts.retain(|a| a.path != rel);
        self.manifest.artifacts.push(Artifact { path: rel, sha256, bytes });
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<RunManifest> {
        self.manifest.complete = true;
        self.write()?;
        Ok(self.manifest)
    }

    /// Writes the manifest flagged incomplete, keeping what was recorded.
    pub fn abort(mut self, error: serde_json::Value) -> anyhow::Result<RunManifest> {
        self.manifest.complete = false;
        self.manifest.error = Some(error);
        self.write()?;
        Ok(self.manifest)
    }

    fn write(&self) -> anyhow::Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&self.manifest)?).with_context(|| format!("writing {}", path.display()))
    }
}

impl RunManifest {
    pub fn load(dir: &Path) -> anyhow::Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        Ok(serde_json::from_slice(&std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?)?)
    }

    /// Every artifact exists and matches its recorded hash and size.
    pub fn verify(&self, dir: &Path) -> anyhow::Result<()> {
        for a in &self.artifacts {
            let path = if a.path.is_absolute() { a.path.clone() } else { dir.join(&a.path) };
            let (sha, bytes) = sha256_file(&path)?;
            if sha != a.sha256 || bytes != a.bytes {
                bail!("artifact {} does not match its manifest entry", a.path.display());
            }
        }
        Ok(())
    }
}
