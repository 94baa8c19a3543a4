//! Run manifests and all-or-nothing output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a command's outputs. Only the two
/// timestamps differ between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub notes: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let config_sha256 = sha256_hex(config.to_string().as_bytes());
        Self {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config,
            config_sha256,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }
}

/// Output files staged next to their destination and renamed into place only
/// when [`Outputs::commit`] runs, so a failed command leaves nothing behind.
#[derive(Default)]
pub struct Outputs {
    staged: Vec<(PathBuf, NamedTempFile, String)>,
}

impl Outputs {
    pub fn write(&mut self, path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
        let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating output in {}", dir.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            f(&mut w).with_context(|| format!("writing {}", path.display()))?;
            w.flush()?;
        }
        let digest = file_digest(tmp.path())?;
        self.staged.push((path.to_owned(), tmp, digest));
        Ok(())
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.write(path, |w| Ok(w.write_all(bytes)?))
    }

    pub fn write_json(&mut self, path: &Path, value: &impl Serialize) -> Result<()> {
        self.write(path, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    /// Renames every staged file into place, then writes the manifest.
    pub fn commit(self, mut manifest: RunManifest, manifest_path: &Path) -> Result<()> {
        manifest.outputs = self
            .staged
            .iter()
            .map(|(p, _, d)| FileDigest {
                path: p.display().to_string(),
                sha256: d.clone(),
            })
            .collect();
        manifest.finished_at = chrono::Utc::now().to_rfc3339();
        let mut last = Outputs::default();
        last.write_json(manifest_path, &manifest)?;
        for (path, tmp, _) in self.staged.into_iter().chain(last.staged) {
            tmp.persist(&path).with_context(|| format!("moving output into {}", path.display()))?;
        }
        Ok(())
    }
}

/// `out.jsonl` → `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}
