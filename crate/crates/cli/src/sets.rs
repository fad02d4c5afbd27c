//! Data sets on disk are addressed by a path prefix `P`: embeddings in
//! `P.emb` (binary) or `P.emb.tsv`, metadata in `P.meta.tsv`, trials in
//! `P.trials.tsv`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use asdplda::data::{load_set, read_embeddings, read_trials, EmbeddingFormat};
use asdplda::{EmbeddingSet, Result, Trial};

pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn embeddings_path(prefix: &Path) -> PathBuf {
    let tsv = with_suffix(prefix, ".emb.tsv");
    if tsv.exists() {
        tsv
    } else {
        with_suffix(prefix, ".emb")
    }
}

pub fn meta_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".meta.tsv")
}

pub fn trials_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".trials.tsv")
}

/// Last path component of a prefix, used to name outputs.
pub fn set_name(prefix: &Path) -> String {
    prefix
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "set".into())
}

/// A set whose metadata file must exist and cover every sample.
pub fn load_labeled(prefix: &Path) -> Result<EmbeddingSet> {
    load_set(&embeddings_path(prefix), Some(&meta_path(prefix)), true)
}

/// A set for scoring; metadata is attached when present.
pub fn load_unlabeled(prefix: &Path) -> Result<EmbeddingSet> {
    let meta = meta_path(prefix);
    load_set(&embeddings_path(prefix), meta.exists().then_some(meta.as_path()), false)
}

pub fn load_trials(prefix: &Path, explicit: Option<&Path>) -> Result<Vec<Trial>> {
    match explicit {
        Some(p) => read_trials(p),
        None => read_trials(&trials_path(prefix)),
    }
}

pub fn load_m_vectors(path: Option<&Path>) -> Result<Option<EmbeddingSet>> {
    path.map(|p| read_embeddings(p, EmbeddingFormat::from_path(p))).transpose()
}
