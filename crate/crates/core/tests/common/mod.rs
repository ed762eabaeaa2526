#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ddr_core::corpus::{text_digest, CorpusRecord, EmbedError, EmbeddingSource};
use ddr_core::{Lexicon, SourceExcerpt};

pub const DIM: usize = 8;

fn hash_vec(word: &str, salt: u64) -> Vec<f32> {
    let d = text_digest(&format!("{salt}:{word}"));
    (0..DIM)
        .map(|i| (f32::from(d[i]) - 127.5) / 64.0 + if i == 0 { 0.1 } else { 0.0 })
        .collect()
}

/// Whitespace tokens, with hyphenated words costing one token per piece.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .flat_map(|w| w.split('-'))
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .map(|t| if t.is_empty() { "<p>".to_owned() } else { t })
        .collect()
}

/// Deterministic stand-in for a language model: pre rows are per-word
/// hashes, post rows mix each row with the running mean of its prefix.
pub struct ToyModel {
    pub calls: AtomicUsize,
    pub tag: String,
}

impl ToyModel {
    pub fn new() -> Self {
        Self {
            calls: AtomicUsize::new(0),
            tag: "toy-model".into(),
        }
    }

    pub fn record(&self, text: &str) -> CorpusRecord {
        let tokens = tokenize(text);
        let pre: Vec<Vec<f32>> = tokens.iter().map(|t| hash_vec(t, 1)).collect();
        let mut running = vec![0f32; DIM];
        let mut post = Vec::new();
        for (i, row) in pre.iter().enumerate() {
            for (r, v) in running.iter_mut().zip(row) {
                *r += v;
            }
            let k = (i + 1) as f32;
            post.extend(row.iter().zip(&running).map(|(v, r)| 0.5 * v + r / k));
        }
        let digest = text_digest(text);
        CorpusRecord {
            text_id: hex::encode(digest),
            text_sha256: digest,
            variant: None,
            token_count: tokens.len(),
            pre_dim: DIM,
            post_dim: DIM,
            pre: pre.concat(),
            post,
            eos: hash_vec(text, 2),
            model_tag: self.tag.clone(),
            tokenizer_tag: "toy-tok".into(),
            normalized: false,
        }
    }
}

impl EmbeddingSource for ToyModel {
    fn embed(&self, text: &str) -> Result<Arc<CorpusRecord>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Arc::new(self.record(text)))
    }
}

/// Fails with a transport error for texts whose digest starts with a byte
/// below `threshold`.
pub struct Flaky<'a> {
    pub inner: &'a dyn EmbeddingSource,
    pub threshold: u8,
}

impl EmbeddingSource for Flaky<'_> {
    fn embed(&self, text: &str) -> Result<Arc<CorpusRecord>, EmbedError> {
        if text_digest(text)[0] < self.threshold {
            return Err(EmbedError::Transport {
                attempts: 3,
                message: "connection refused".into(),
            });
        }
        self.inner.embed(text)
    }
}

pub fn lexicon() -> Lexicon {
    let syn = |h: &str, s: &[&str]| (h.to_owned(), s.iter().map(|x| x.to_string()).collect());
    Lexicon::new(
        [
            syn("quick", &["fast", "rapid", "swift"]),
            syn("dog", &["hound", "canine"]),
            syn("big", &["large", "huge"]),
            syn("house", &["home", "dwelling"]),
            syn("old", &["aged", "ancient"]),
            syn("road", &["street", "lane"]),
            syn("cold", &["chilly", "icy"]),
            syn("night", &["evening"]),
            syn("good", &["fine", "well-made"]),
            syn("lonely", &["solitary", "self-isolated"]),
            syn("alone", &["all-alone"]),
        ],
        [
            "table", "river", "green", "seven", "paper", "than", "slowly", "under", "metal",
            "song", "window", "bright", "across", "stone", "garden",
        ]
        .map(String::from),
    )
    .unwrap()
}

pub fn excerpts() -> Vec<SourceExcerpt> {
    [
        (
            "e01",
            "The quick dog ran down the old road on a cold night.",
        ),
        ("e02", "A big house stood alone at the end of the road."),
        (
            "e03",
            "Nobody liked the cold, but the old dog slept in the big house.",
        ),
        (
            "e04",
            "Every night the quick wind rattled the windows of the old house.",
        ),
        (
            "e05",
            "The good road led to a big town where the dog was born.",
        ),
        (
            "e06",
            "It was a cold and quiet night near the old house by the road.",
        ),
        (
            "e07",
            "The quick fox and the big dog met on the road at night.",
        ),
        ("e08", "She found the old map in a big box under the house."),
    ]
    .into_iter()
    .map(|(i, t)| SourceExcerpt::new(i, t).unwrap())
    .collect()
}
