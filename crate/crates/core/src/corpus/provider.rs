//! Embedding provider client, prebuilt-corpus lookup and the on-disk cache.
//!
//! Wire protocol: `POST <endpoint>` with body `{"text": "..."}`; the provider
//! answers
//!
//! ```json
//! {"model_tag": "...", "tokenizer_tag": "...", "token_count": 3,
//!  "pre": [[...], [...], [...]], "post": [[...], [...], [...]],
//!  "eos": [...], "normalized": false}
//! ```
//!
//! `pre` rows are embedding-layer vectors, `post` rows final-hidden-layer
//! vectors for the same tokens, `eos` the final-hidden-layer vector at the
//! end-of-sequence position (not counted in `token_count`).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::format::{read_corpus, write_corpus, CorpusError, CorpusRecord};
use super::text_digest;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("provider unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("inconsistent provider response: {0}")]
    Inconsistent(String),
    #[error("text {digest} is not present in the corpus")]
    NotInCorpus { digest: String },
    #[error("provider switched model from {pinned:?} to {got:?}")]
    ModelChanged { pinned: String, got: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl EmbedError {
    /// Failures that could succeed on a later run.
    pub fn is_transport(&self) -> bool {
        matches!(self, EmbedError::Transport { .. })
    }
}

/// Anything that can turn a text into embeddings.
pub trait EmbeddingSource: Send + Sync {
    fn embed(&self, text: &str) -> Result<Arc<CorpusRecord>, EmbedError>;
}

#[derive(Debug, Serialize)]
struct ProviderRequest<'a> {
    text: &'a str,
}

/// Response body of the provider protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderResponse {
    pub model_tag: String,
    pub tokenizer_tag: String,
    pub token_count: usize,
    pub pre: Vec<Vec<f32>>,
    pub post: Vec<Vec<f32>>,
    pub eos: Vec<f32>,
    pub normalized: bool,
}

fn flatten(rows: &[Vec<f32>], what: &str) -> Result<(usize, Vec<f32>), EmbedError> {
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(EmbedError::Inconsistent(format!("{what} rows are empty")));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(EmbedError::Inconsistent(format!(
            "{what} row {i} has {} values, row 0 has {dim}",
            r.len()
        )));
    }
    Ok((dim, rows.concat()))
}

impl ProviderResponse {
    /// Checks shapes and converts into a record keyed by the text's digest.
    pub fn into_record(self, text: &str) -> Result<CorpusRecord, EmbedError> {
        if self.pre.len() != self.post.len() || self.pre.len() != self.token_count {
            return Err(EmbedError::Inconsistent(format!(
                "token_count {} but pre has {} rows and post has {} rows",
                self.token_count,
                self.pre.len(),
                self.post.len()
            )));
        }
        if self.token_count == 0 {
            return Err(EmbedError::Inconsistent("token_count is 0".into()));
        }
        let (pre_dim, pre) = flatten(&self.pre, "pre")?;
        let (post_dim, post) = flatten(&self.post, "post")?;
        if self.eos.len() != post_dim {
            return Err(EmbedError::Inconsistent(format!(
                "eos has {} values, post rows have {post_dim}",
                self.eos.len()
            )));
        }
        let digest = text_digest(text);
        let record = CorpusRecord {
            text_id: hex::encode(digest),
            text_sha256: digest,
            variant: None,
            token_count: self.token_count,
            pre_dim,
            post_dim,
            pre,
            post,
            eos: self.eos,
            model_tag: self.model_tag,
            tokenizer_tag: self.tokenizer_tag,
            normalized: self.normalized,
        };
        record
            .validate()
            .map_err(|e| EmbedError::Inconsistent(e.to_string()))?;
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
            multiplier: 2,
        }
    }
}

/// Blocking HTTP client for the provider protocol. Only transport failures
/// (connection errors, timeouts, 5xx, 429) are retried.
#[derive(Debug, Clone)]
pub struct ProviderClient {
    endpoint: String,
    bearer: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl ProviderClient {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, EmbedError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint: endpoint.into(),
            bearer: None,
            retry: RetryPolicy::default(),
            http,
        })
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token.filter(|t| !t.is_empty());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn fetch(&self, text: &str) -> Result<CorpusRecord, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(backoff);
                backoff *= self.retry.multiplier;
            }
            let mut req = self
                .http
                .post(&self.endpoint)
                .json(&ProviderRequest { text });
            if let Some(token) = &self.bearer {
                req = req.bearer_auth(token);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                last = format!("status {status}");
                continue;
            }
            let body = resp.text().map_err(|e| EmbedError::Transport {
                attempts: attempt,
                message: e.to_string(),
            })?;
            if !status.is_success() {
                return Err(EmbedError::Rejected {
                    status: status.as_u16(),
                    body,
                });
            }
            let parsed: ProviderResponse =
                serde_json::from_str(&body).map_err(|e| EmbedError::Malformed(e.to_string()))?;
            return parsed.into_record(text);
        }
        Err(EmbedError::Transport {
            attempts,
            message: last,
        })
    }
}

/// Fetches one text's embeddings from `endpoint` with the default policy.
pub fn fetch_embeddings(text: &str, endpoint: &str) -> Result<CorpusRecord, EmbedError> {
    ProviderClient::new(endpoint)?.fetch(text)
}

/// Lookup over a prebuilt corpus, by text digest.
#[derive(Debug, Default)]
pub struct CorpusSource {
    by_digest: HashMap<[u8; 32], Arc<CorpusRecord>>,
}

impl CorpusSource {
    pub fn new(records: impl IntoIterator<Item = CorpusRecord>) -> Self {
        Self {
            by_digest: records
                .into_iter()
                .map(|r| (r.text_sha256, Arc::new(r)))
                .collect(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        Ok(Self::new(read_corpus(path)?.1))
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }
}

impl EmbeddingSource for CorpusSource {
    fn embed(&self, text: &str) -> Result<Arc<CorpusRecord>, EmbedError> {
        let digest = text_digest(text);
        self.by_digest
            .get(&digest)
            .cloned()
            .ok_or_else(|| EmbedError::NotInCorpus {
                digest: hex::encode(digest),
            })
    }
}

/// Records keyed by `(model_tag, text digest)`, persisted as one corpus file
/// per model tag inside a directory.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: HashMap<(String, [u8; 32]), Arc<CorpusRecord>>,
}

impl EmbeddingCache {
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut cache = Self::default();
        if !dir.exists() {
            return Ok(cache);
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ddrc"))
            .collect();
        paths.sort();
        for p in paths {
            for r in read_corpus(&p)?.1 {
                cache.insert(Arc::new(r));
            }
        }
        Ok(cache)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir)?;
        let mut by_model: BTreeMap<&str, Vec<CorpusRecord>> = BTreeMap::new();
        for ((model, _), r) in &self.entries {
            by_model.entry(model).or_default().push((**r).clone());
        }
        for (model, mut records) in by_model {
            records.sort_by_key(|a| a.text_sha256);
            let name = &hex::encode(text_digest(model))[..16];
            write_corpus(&dir.join(format!("{name}.ddrc")), &records)?;
        }
        Ok(())
    }

    pub fn get(&self, model_tag: &str, digest: &[u8; 32]) -> Option<Arc<CorpusRecord>> {
        self.entries.get(&(model_tag.to_owned(), *digest)).cloned()
    }

    pub fn insert(&mut self, record: Arc<CorpusRecord>) {
        self.entries
            .insert((record.model_tag.clone(), record.text_sha256), record);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The model tag, if every cached record shares one.
    pub fn sole_model(&self) -> Option<String> {
        let mut models = self.entries.keys().map(|(m, _)| m);
        let first = models.next()?;
        models.all(|m| m == first).then(|| first.clone())
    }
}

/// Provider client behind a cache. The model tag is pinned by the cache
/// contents (when they agree on one) or by the first response; a provider
/// that later answers with a different model is an error.
pub struct CachedProvider {
    client: ProviderClient,
    cache: RwLock<EmbeddingCache>,
    pinned: Mutex<Option<String>>,
    calls: AtomicUsize,
}

impl CachedProvider {
    pub fn new(client: ProviderClient, cache: EmbeddingCache) -> Self {
        let pinned = cache.sole_model();
        Self {
            client,
            cache: RwLock::new(cache),
            pinned: Mutex::new(pinned),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of requests that reached the provider.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_cache(self) -> EmbeddingCache {
        self.cache.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl EmbeddingSource for CachedProvider {
    fn embed(&self, text: &str) -> Result<Arc<CorpusRecord>, EmbedError> {
        let digest = text_digest(text);
        let pinned = self.pinned.lock().unwrap().clone();
        if let Some(model) = &pinned {
            if let Some(hit) = self.cache.read().unwrap().get(model, &digest) {
                return Ok(hit);
            }
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let record = Arc::new(self.client.fetch(text)?);
        {
            let mut pinned = self.pinned.lock().unwrap();
            match pinned.as_ref() {
                Some(model) if *model != record.model_tag => {
                    return Err(EmbedError::ModelChanged {
                        pinned: model.clone(),
                        got: record.model_tag.clone(),
                    });
                }
                Some(_) => {}
                None => *pinned = Some(record.model_tag.clone()),
            }
        }
        self.cache.write().unwrap().insert(record.clone());
        Ok(record)
    }
}

/// Wraps a source and remembers every record it hands out.
pub struct RecordingSource<'a> {
    inner: &'a dyn EmbeddingSource,
    seen: Mutex<BTreeMap<[u8; 32], Arc<CorpusRecord>>>,
}

impl<'a> RecordingSource<'a> {
    pub fn new(inner: &'a dyn EmbeddingSource) -> Self {
        Self {
            inner,
            seen: Mutex::new(BTreeMap::new()),
        }
    }

    /// Every record served so far, ordered by text digest.
    pub fn records(&self) -> Vec<Arc<CorpusRecord>> {
        self.seen.lock().unwrap().values().cloned().collect()
    }
}

impl EmbeddingSource for RecordingSource<'_> {
    fn embed(&self, text: &str) -> Result<Arc<CorpusRecord>, EmbedError> {
        let r = self.inner.embed(text)?;
        self.seen.lock().unwrap().insert(r.text_sha256, r.clone());
        Ok(r)
    }
}
