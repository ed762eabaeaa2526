//! Embedding corpus storage, the provider client, text datasets and
//! dataset statistics.

pub mod format;
pub mod provider;
pub mod stats;

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::perturbation::{PerturbationError, SourceExcerpt};

pub use format::{read_corpus, write_corpus, CorpusError, CorpusHeader, CorpusRecord, VariantMeta};
pub use provider::{
    fetch_embeddings, CachedProvider, CorpusSource, EmbedError, EmbeddingCache, EmbeddingSource,
    ProviderClient, ProviderResponse, RecordingSource, RetryPolicy,
};
pub use stats::{corpus_stats, histogram_export, CorpusStats, StatsError};

/// SHA-256 of the UTF-8 text; the corpus lookup key.
pub fn text_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate excerpt id {0:?}")]
    DuplicateId(String),
    #[error("dataset {0} contains no excerpts")]
    Empty(String),
    #[error(transparent)]
    Excerpt(#[from] PerturbationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct DatasetLine {
    id: String,
    text: String,
}

/// Reads UTF-8 JSON Lines of `{"id": ..., "text": ...}`.
pub fn load_dataset(path: &Path) -> Result<Vec<SourceExcerpt>, DatasetError> {
    let name = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in BufReader::new(std::fs::File::open(path)?)
        .lines()
        .enumerate()
    {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: name.clone(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(parsed.id.clone()) {
            return Err(DatasetError::DuplicateId(parsed.id));
        }
        out.push(SourceExcerpt::new(parsed.id, parsed.text)?);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty(name));
    }
    Ok(out)
}

/// SHA-256 over `id<TAB>text<LF>` for every excerpt, in order.
pub fn dataset_hash(excerpts: &[SourceExcerpt]) -> String {
    let mut h = Sha256::new();
    for e in excerpts {
        h.update(e.id.as_bytes());
        h.update(b"\t");
        h.update(e.text.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"a\",\"text\":\"one two\"}\n\n{\"id\":\"b\",\"text\":\"three\"}\n",
        )
        .unwrap();
        let d = load_dataset(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].word_count(), 2);
        assert_eq!(dataset_hash(&d), dataset_hash(&load_dataset(&p).unwrap()));

        std::fs::write(
            &p,
            "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&p),
            Err(DatasetError::DuplicateId(_))
        ));
        std::fs::write(&p, "{\"id\":\"a\"}\n").unwrap();
        assert!(matches!(
            load_dataset(&p),
            Err(DatasetError::Parse { line: 1, .. })
        ));
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_dataset(&p), Err(DatasetError::Empty(_))));
    }
}
