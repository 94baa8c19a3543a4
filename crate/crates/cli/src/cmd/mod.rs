pub mod curate;
pub mod eval;
pub mod serve;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::{bail, Context, Result};
use mmdr_core::corpus::{load_corpus, Document, Split};
use mmdr_core::embeddings::{read_store, EmbeddingStore};

use crate::manifest::RunManifest;

/// Loads a corpus that is expected to be clean already: any rejected line
/// fails the command.
pub fn load_clean(path: &Path, split: Split, manifest: &mut RunManifest) -> Result<Vec<Document>> {
    let loaded = load_corpus(path, split).with_context(|| format!("loading corpus {}", path.display()))?;
    if let Some(r) = loaded.rejects.first() {
        bail!(
            "{}: {} malformed line(s), first {} ({}: {})",
            path.display(),
            loaded.rejects.len(),
            r.id,
            r.rule,
            r.detail
        );
    }
    for w in loaded.warnings {
        log::warn!("{}: {w}", path.display());
        manifest.note(format!("{}: {w}", path.display()));
    }
    manifest.input(path)?;
    Ok(loaded.docs)
}

pub fn load_store(path: &Path, manifest: &mut RunManifest) -> Result<EmbeddingStore> {
    let s = read_store(path).with_context(|| format!("loading embedding store {}", path.display()))?;
    manifest.input(path)?;
    Ok(s)
}

pub fn default_manifest_path(explicit: &Option<std::path::PathBuf>, primary: &Path) -> std::path::PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| crate::manifest::sibling(primary, "manifest.json"))
}
