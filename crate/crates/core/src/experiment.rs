//! The perturbation experiment: for every excerpt, depth and substitution
//! kind, generate a variant, embed it next to the original, resample until
//! the token lengths agree and score the pair with every method.
//!
//! Failures are per cell and never abort the run. A cell is one
//! `(source, method, depth, kind)`; records and failures together partition
//! the planned cells.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{text_digest, EmbeddingSource, VariantMeta};
use crate::ddr::{score_with, CentroidSpan, Method};
use crate::perturbation::{
    check_depth, generate_variant, validate_token_length, variant_seed, Kind, Lexicon,
    SourceExcerpt, RNG_NAME,
};

/// Candidate variants tried per (excerpt, depth, kind) before giving up.
pub const RESAMPLE_BUDGET: u32 = 25;

/// Runs whose failed-cell fraction exceeds this are flagged.
pub const FAILURE_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no excerpts to process")]
    NoExcerpts,
    #[error("no scoring methods selected")]
    NoMethods,
    #[error("no edit depths selected")]
    NoDepths,
    #[error(transparent)]
    Depth(#[from] crate::perturbation::PerturbationError),
    #[error("cannot resume: {field} differs (manifest {expected}, now {found})")]
    ResumeMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub source_id: String,
    pub method: Method,
    pub depth: u8,
    pub kind: Kind,
    pub score: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub source_id: String,
    pub method: Method,
    pub depth: u8,
    pub kind: Kind,
}

impl ScoreRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            source_id: self.source_id.clone(),
            method: self.method,
            depth: self.depth,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub source_id: String,
    pub method: Method,
    pub depth: u8,
    pub kind: Kind,
    pub reason: String,
    /// Transport trouble; a resumed run tries the cell again.
    pub retryable: bool,
}

impl CellFailure {
    pub fn key(&self) -> CellKey {
        CellKey {
            source_id: self.source_id.clone(),
            method: self.method,
            depth: self.depth,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_hash: String,
    pub lexicon_hash: String,
    pub model_tag: Option<String>,
    pub seed: u64,
    pub rng: String,
    pub methods: Vec<Method>,
    pub depths: Vec<u8>,
    pub centroid_span: CentroidSpan,
    pub resample_budget: u32,
    pub planned_cells: usize,
    pub scored_cells: usize,
    /// source id → `d<depth>-<kind>` → rejected candidates before acceptance.
    pub resamples: BTreeMap<String, BTreeMap<String, u32>>,
    pub failures: Vec<CellFailure>,
}

impl RunManifest {
    pub fn failure_rate(&self) -> f64 {
        if self.planned_cells == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.planned_cells as f64
        }
    }

    pub fn exceeds_failure_threshold(&self) -> bool {
        self.failure_rate() > FAILURE_THRESHOLD
    }

    pub fn to_json(&self) -> Result<String, ExperimentError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// SHA-256 of the manifest's JSON rendering; stamped on analysis exports.
    pub fn content_hash(&self) -> Result<String, ExperimentError> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub depths: Vec<u8>,
    pub seed: u64,
    pub centroid_span: CentroidSpan,
    /// Excerpts processed in parallel; bounds provider requests in flight.
    pub concurrency: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            depths: vec![1, 2, 3],
            seed: 0,
            centroid_span: CentroidSpan::Content,
            concurrency: 4,
        }
    }
}

/// A text that was embedded during the run and what it was.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddedText {
    pub text_id: String,
    pub digest: [u8; 32],
    pub variant: Option<VariantMeta>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<ScoreRecord>,
    pub manifest: RunManifest,
    /// Originals and every candidate variant, in processing order.
    pub embedded: Vec<EmbeddedText>,
}

struct Group {
    depth: u8,
    kind: Kind,
    methods: Vec<Method>,
}

#[derive(Default)]
struct ExcerptOutcome {
    records: Vec<ScoreRecord>,
    failures: Vec<CellFailure>,
    resamples: BTreeMap<String, u32>,
    model_tag: Option<String>,
    embedded: Vec<EmbeddedText>,
}

fn fail_all(
    src: &SourceExcerpt,
    groups: &[Group],
    reason: &str,
    retryable: bool,
    out: &mut ExcerptOutcome,
) {
    for g in groups {
        for &method in &g.methods {
            out.failures.push(CellFailure {
                source_id: src.id.clone(),
                method,
                depth: g.depth,
                kind: g.kind,
                reason: reason.to_owned(),
                retryable,
            });
        }
    }
}

fn run_excerpt(
    src: &SourceExcerpt,
    lexicon: &Lexicon,
    source: &dyn EmbeddingSource,
    groups: &[Group],
    seed: u64,
    span: CentroidSpan,
) -> ExcerptOutcome {
    let mut out = ExcerptOutcome::default();
    let original = match source.embed(&src.text) {
        Ok(r) => r,
        Err(e) => {
            fail_all(
                src,
                groups,
                &format!("embedding original: {e}"),
                e.is_transport(),
                &mut out,
            );
            return out;
        }
    };
    out.embedded.push(EmbeddedText {
        text_id: src.id.clone(),
        digest: text_digest(&src.text),
        variant: None,
    });
    out.model_tag = Some(original.model_tag.clone());
    let original_pair = match original.to_pair() {
        Ok(p) => p,
        Err(e) => {
            fail_all(
                src,
                groups,
                &format!("original embeddings: {e}"),
                false,
                &mut out,
            );
            return out;
        }
    };

    for g in groups {
        let single = std::slice::from_ref(g);
        let mut rejected = 0u32;
        let mut accepted = false;
        for attempt in 0..RESAMPLE_BUDGET {
            let vseed = variant_seed(seed, g.depth, attempt);
            let variant = match generate_variant(src, g.depth, g.kind, lexicon, vseed) {
                Ok(v) => v,
                Err(e) => {
                    fail_all(
                        src,
                        single,
                        &format!("generating variant: {e}"),
                        false,
                        &mut out,
                    );
                    accepted = true;
                    break;
                }
            };
            let record = match source.embed(&variant.text) {
                Ok(r) => r,
                Err(e) => {
                    fail_all(
                        src,
                        single,
                        &format!("embedding variant: {e}"),
                        e.is_transport(),
                        &mut out,
                    );
                    accepted = true;
                    break;
                }
            };
            out.embedded.push(EmbeddedText {
                text_id: format!("{}#d{}-{}-a{}", src.id, g.depth, g.kind, attempt),
                digest: record.text_sha256,
                variant: Some(VariantMeta {
                    depth: variant.depth,
                    kind: variant.kind,
                    replaced_positions: variant.replaced_positions.clone(),
                }),
            });
            if !validate_token_length(original.token_count, record.token_count) {
                rejected += 1;
                continue;
            }
            accepted = true;
            let pair = match record.to_pair() {
                Ok(p) => p,
                Err(e) => {
                    fail_all(
                        src,
                        single,
                        &format!("variant embeddings: {e}"),
                        false,
                        &mut out,
                    );
                    break;
                }
            };
            for &method in &g.methods {
                match score_with(method, &original_pair, &pair, span) {
                    Ok(s) => out.records.push(ScoreRecord {
                        source_id: src.id.clone(),
                        method,
                        depth: g.depth,
                        kind: g.kind,
                        score: s.value,
                        seed: vseed,
                    }),
                    Err(e) => out.failures.push(CellFailure {
                        source_id: src.id.clone(),
                        method,
                        depth: g.depth,
                        kind: g.kind,
                        reason: e.to_string(),
                        retryable: false,
                    }),
                }
            }
            break;
        }
        if !accepted {
            fail_all(
                src,
                single,
                &format!("token length never matched the original's {} tokens in {RESAMPLE_BUDGET} attempts", original.token_count),
                false,
                &mut out,
            );
        }
        out.resamples
            .insert(format!("d{}-{}", g.depth, g.kind), rejected);
    }
    out
}

fn validate_config(
    excerpts: &[SourceExcerpt],
    config: &ExperimentConfig,
) -> Result<(), ExperimentError> {
    if excerpts.is_empty() {
        return Err(ExperimentError::NoExcerpts);
    }
    if config.methods.is_empty() {
        return Err(ExperimentError::NoMethods);
    }
    if config.depths.is_empty() {
        return Err(ExperimentError::NoDepths);
    }
    for &d in &config.depths {
        check_depth(d)?;
    }
    Ok(())
}

fn planned_cells(
    excerpts: &[SourceExcerpt],
    methods: &[Method],
    depths: &[u8],
) -> BTreeSet<CellKey> {
    let mut cells = BTreeSet::new();
    for e in excerpts {
        for &method in methods {
            for &depth in depths {
                for kind in Kind::ALL {
                    cells.insert(CellKey {
                        source_id: e.id.clone(),
                        method,
                        depth,
                        kind,
                    });
                }
            }
        }
    }
    cells
}

/// Runs the pipeline for the cells in `todo`, excerpts in parallel.
fn execute(
    excerpts: &[SourceExcerpt],
    lexicon: &Lexicon,
    source: &dyn EmbeddingSource,
    todo: &BTreeSet<CellKey>,
    seed: u64,
    span: CentroidSpan,
    concurrency: usize,
) -> Vec<ExcerptOutcome> {
    let work: Vec<(usize, Vec<Group>)> = excerpts
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let mut by_group: BTreeMap<(u8, Kind), Vec<Method>> = BTreeMap::new();
            for cell in todo.iter().filter(|c| c.source_id == e.id) {
                by_group
                    .entry((cell.depth, cell.kind))
                    .or_default()
                    .push(cell.method);
            }
            let groups: Vec<Group> = by_group
                .into_iter()
                .map(|((depth, kind), methods)| Group {
                    depth,
                    kind,
                    methods,
                })
                .collect();
            (!groups.is_empty()).then_some((i, groups))
        })
        .collect();

    let slots: Vec<Mutex<Option<ExcerptOutcome>>> =
        (0..work.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = concurrency.max(1).min(work.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some((i, groups)) = work.get(k) else {
                    break;
                };
                let outcome = run_excerpt(&excerpts[*i], lexicon, source, groups, seed, span);
                *slots[k].lock().unwrap() = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap()
                .expect("every work item is processed")
        })
        .collect()
}

fn sort_canonical(records: &mut [ScoreRecord], failures: &mut [CellFailure]) {
    records.sort_by_key(|a| a.key());
    failures.sort_by_key(|a| a.key());
}

pub fn run_experiment(
    excerpts: &[SourceExcerpt],
    lexicon: &Lexicon,
    source: &dyn EmbeddingSource,
    config: &ExperimentConfig,
) -> Result<RunOutput, ExperimentError> {
    validate_config(excerpts, config)?;
    let manifest = RunManifest {
        dataset_hash: crate::corpus::dataset_hash(excerpts),
        lexicon_hash: lexicon.content_hash(),
        model_tag: None,
        seed: config.seed,
        rng: RNG_NAME.to_owned(),
        methods: config.methods.clone(),
        depths: config.depths.clone(),
        centroid_span: config.centroid_span,
        resample_budget: RESAMPLE_BUDGET,
        planned_cells: 0,
        scored_cells: 0,
        resamples: BTreeMap::new(),
        failures: Vec::new(),
    };
    complete(
        excerpts,
        lexicon,
        source,
        manifest,
        Vec::new(),
        config.concurrency,
    )
}

/// Completes a partial run. Only cells with neither a record nor a
/// permanent failure are computed; the result equals a fresh run with the
/// manifest's seed.
pub fn resume_run(
    manifest: RunManifest,
    partial: Vec<ScoreRecord>,
    excerpts: &[SourceExcerpt],
    lexicon: &Lexicon,
    source: &dyn EmbeddingSource,
    concurrency: usize,
) -> Result<RunOutput, ExperimentError> {
    let dataset = crate::corpus::dataset_hash(excerpts);
    if dataset != manifest.dataset_hash {
        return Err(ExperimentError::ResumeMismatch {
            field: "dataset hash",
            expected: manifest.dataset_hash,
            found: dataset,
        });
    }
    let lex = lexicon.content_hash();
    if lex != manifest.lexicon_hash {
        return Err(ExperimentError::ResumeMismatch {
            field: "lexicon hash",
            expected: manifest.lexicon_hash,
            found: lex,
        });
    }
    validate_config(
        excerpts,
        &ExperimentConfig {
            methods: manifest.methods.clone(),
            depths: manifest.depths.clone(),
            seed: manifest.seed,
            centroid_span: manifest.centroid_span,
            concurrency,
        },
    )?;
    complete(excerpts, lexicon, source, manifest, partial, concurrency)
}

fn complete(
    excerpts: &[SourceExcerpt],
    lexicon: &Lexicon,
    source: &dyn EmbeddingSource,
    mut manifest: RunManifest,
    partial: Vec<ScoreRecord>,
    concurrency: usize,
) -> Result<RunOutput, ExperimentError> {
    let planned = planned_cells(excerpts, &manifest.methods, &manifest.depths);
    let mut records: Vec<ScoreRecord> = partial
        .into_iter()
        .filter(|r| planned.contains(&r.key()))
        .collect();
    let mut failures: Vec<CellFailure> = std::mem::take(&mut manifest.failures)
        .into_iter()
        .filter(|f| !f.retryable && planned.contains(&f.key()))
        .collect();
    let done: BTreeSet<CellKey> = records
        .iter()
        .map(ScoreRecord::key)
        .chain(failures.iter().map(CellFailure::key))
        .collect();
    let todo: BTreeSet<CellKey> = planned.difference(&done).cloned().collect();

    let outcomes = execute(
        excerpts,
        lexicon,
        source,
        &todo,
        manifest.seed,
        manifest.centroid_span,
        concurrency,
    );
    let mut embedded = Vec::new();
    for (outcome, src) in outcomes.into_iter().zip(
        excerpts
            .iter()
            .filter(|e| todo.iter().any(|c| c.source_id == e.id)),
    ) {
        if manifest.model_tag.is_none() {
            manifest.model_tag = outcome.model_tag.clone();
        }
        let counts = manifest.resamples.entry(src.id.clone()).or_default();
        counts.extend(outcome.resamples);
        records.extend(outcome.records);
        failures.extend(outcome.failures);
        embedded.extend(outcome.embedded);
    }
    sort_canonical(&mut records, &mut failures);
    manifest.planned_cells = planned.len();
    manifest.scored_cells = records.len();
    manifest.failures = failures;
    Ok(RunOutput {
        records,
        manifest,
        embedded,
    })
}

/// Header: `source_id,method,depth,kind,score,seed`.
pub fn write_scores_csv<W: std::io::Write>(
    out: W,
    records: &[ScoreRecord],
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["source_id", "method", "depth", "kind", "score", "seed"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: std::io::Read>(input: R) -> Result<Vec<ScoreRecord>, ExperimentError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<ScoreRecord>, _>>()
        .map_err(Into::into)
}

pub fn write_scores_file(path: &Path, records: &[ScoreRecord]) -> Result<(), ExperimentError> {
    write_scores_csv(std::fs::File::create(path)?, records)
}

pub fn read_scores_file(path: &Path) -> Result<Vec<ScoreRecord>, ExperimentError> {
    read_scores_csv(std::fs::File::open(path)?)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), ExperimentError> {
    std::fs::write(path, manifest.to_json()?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, ExperimentError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
