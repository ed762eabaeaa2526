//! The five pipeline stages. Each reads and writes plain files so any stage
//! can be rerun on its own.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ddr_core::analysis::{build_report, write_report};
use ddr_core::corpus::stats::{write_histogram_csv, write_stats_csv};
use ddr_core::corpus::{
    corpus_stats, histogram_export, load_dataset, write_corpus, CachedProvider, CorpusRecord,
    CorpusSource, EmbeddingCache, EmbeddingSource, ProviderClient, RecordingSource, StatsError,
};
use ddr_core::experiment::{
    read_manifest, read_scores_file, resume_run, run_experiment, write_manifest, write_scores_file,
    ExperimentConfig, RunOutput, FAILURE_THRESHOLD,
};
use ddr_core::perturbation::{generate_suite, write_variants_jsonl, DEPTHS};
use ddr_core::{Lexicon, Method, SourceExcerpt};
use serde_json::json;

use crate::config::{RunConfig, Source};
use crate::exit::{CliError, Code, ResultExt};

pub const VARIANTS_FILE: &str = "variants.jsonl";
pub const SKIPPED_FILE: &str = "perturb_skipped.json";
pub const CORPUS_FILE: &str = "corpus.ddrc";
pub const CACHE_DIR: &str = "embed_cache";
pub const SCORES_FILE: &str = "scores.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_DIR: &str = "report";
pub const STATS_FILE: &str = "stats.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";

const TOKEN_ENV: &str = "DDRBENCH_PROVIDER_TOKEN";

fn create_out(cfg: &RunConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.out)
        .usage(format!("creating output directory {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn dataset(cfg: &RunConfig) -> Result<Vec<SourceExcerpt>, CliError> {
    let path = cfg.dataset()?;
    load_dataset(path).data(format!("reading dataset {}", path.display()))
}

fn lexicon(cfg: &RunConfig) -> Result<Lexicon, CliError> {
    let (lex, vocab) = (cfg.lexicon()?, cfg.vocab()?);
    Lexicon::load(lex, vocab).data(format!(
        "reading lexicon {} / vocabulary {}",
        lex.display(),
        vocab.display()
    ))
}

fn experiment_config(cfg: &RunConfig) -> ExperimentConfig {
    ExperimentConfig {
        methods: cfg.methods.clone(),
        depths: cfg.depths.clone(),
        seed: cfg.seed,
        centroid_span: cfg.centroid_span,
        concurrency: cfg.concurrency,
    }
}

fn cached_provider(url: &str, cache_dir: &Path) -> Result<CachedProvider, CliError> {
    let client = ProviderClient::new(url)
        .with_code(Code::Provider, "creating HTTP client")?
        .with_bearer(std::env::var(TOKEN_ENV).ok());
    let cache = EmbeddingCache::load_dir(cache_dir)
        .data(format!("reading cache {}", cache_dir.display()))?;
    Ok(CachedProvider::new(client, cache))
}

/// Provider trouble first, then the failure threshold.
fn check_failures(run: &RunOutput) -> Result<(), CliError> {
    let m = &run.manifest;
    let retryable = m.failures.iter().filter(|f| f.retryable).count();
    if retryable > 0 {
        return Err(CliError::new(
            Code::Provider,
            anyhow::anyhow!("{retryable} cell(s) failed on provider errors; rerun with --resume once it is reachable"),
        ));
    }
    if m.exceeds_failure_threshold() {
        return Err(CliError::new(
            Code::FailureThreshold,
            anyhow::anyhow!(
                "{} of {} cells failed ({:.1}%, limit {:.0}%)",
                m.failures.len(),
                m.planned_cells,
                100.0 * m.failure_rate(),
                100.0 * FAILURE_THRESHOLD
            ),
        ));
    }
    Ok(())
}

pub fn perturb(cfg: &RunConfig) -> Result<(), CliError> {
    let excerpts = dataset(cfg)?;
    let lex = lexicon(cfg)?;
    let out = create_out(cfg)?;
    let mut variants = Vec::new();
    let mut skipped = Vec::new();
    for e in &excerpts {
        match generate_suite(e, &lex, cfg.seed) {
            Ok(v) => variants.extend(v),
            Err(err) => skipped.push(json!({ "id": e.id, "reason": err.to_string() })),
        }
    }
    let path = out.join(VARIANTS_FILE);
    write_variants_jsonl(&path, &variants).data(format!("writing {}", path.display()))?;
    let body = serde_json::to_string_pretty(&skipped).expect("json values serialize") + "\n";
    std::fs::write(out.join(SKIPPED_FILE), body).data("writing skip list")?;
    eprintln!(
        "{} variants for {} of {} excerpts ({} skipped) -> {}",
        variants.len(),
        excerpts.len() - skipped.len(),
        excerpts.len(),
        skipped.len(),
        path.display()
    );
    Ok(())
}

pub fn embed(cfg: &RunConfig) -> Result<(), CliError> {
    let url = match &cfg.source {
        Some(Source::Provider(url)) => url.clone(),
        _ => return Err(CliError::usage("embed needs --provider-url")),
    };
    let excerpts = dataset(cfg)?;
    let lex = lexicon(cfg)?;
    let out = create_out(cfg)?;
    let cache_dir = out.join(CACHE_DIR);
    let provider = cached_provider(&url, &cache_dir)?;
    let recorder = RecordingSource::new(&provider);
    let run = run_experiment(&excerpts, &lex, &recorder, &experiment_config(cfg))
        .data("running pipeline")?;

    let served: HashMap<[u8; 32], Arc<CorpusRecord>> = recorder
        .records()
        .into_iter()
        .map(|r| (r.text_sha256, r))
        .collect();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for e in &run.embedded {
        if !seen.insert(e.digest) {
            continue;
        }
        if let Some(r) = served.get(&e.digest) {
            let mut r = (**r).clone();
            r.text_id = e.text_id.clone();
            r.variant = e.variant.clone();
            records.push(r);
        }
    }
    let path = out.join(CORPUS_FILE);
    write_corpus(&path, &records).data(format!("writing {}", path.display()))?;
    let calls = provider.provider_calls();
    drop(recorder);
    provider
        .into_cache()
        .save_dir(&cache_dir)
        .data(format!("writing cache {}", cache_dir.display()))?;
    eprintln!(
        "{} records ({} provider calls) -> {}",
        records.len(),
        calls,
        path.display()
    );
    check_failures(&run)
}

pub fn score(cfg: &RunConfig, resume: bool) -> Result<(), CliError> {
    let excerpts = dataset(cfg)?;
    let lex = lexicon(cfg)?;
    let out = create_out(cfg)?.to_path_buf();
    let cache_dir = out.join(CACHE_DIR);

    let mut provider = None;
    let corpus;
    let source: &dyn EmbeddingSource = match &cfg.source {
        Some(Source::Provider(url)) => provider.insert(cached_provider(url, &cache_dir)?),
        Some(Source::Corpus(path)) => {
            if !path.exists() {
                return Err(CliError::usage(format!(
                    "--corpus path {} does not exist",
                    path.display()
                )));
            }
            corpus = CorpusSource::open(path).data(format!("reading corpus {}", path.display()))?;
            &corpus
        }
        None => return Err(CliError::usage("score needs --provider-url or --corpus")),
    };

    let (scores_path, manifest_path) = (out.join(SCORES_FILE), out.join(MANIFEST_FILE));
    let run = if resume && manifest_path.exists() {
        let manifest =
            read_manifest(&manifest_path).data(format!("reading {}", manifest_path.display()))?;
        let partial = if scores_path.exists() {
            read_scores_file(&scores_path).data(format!("reading {}", scores_path.display()))?
        } else {
            Vec::new()
        };
        resume_run(manifest, partial, &excerpts, &lex, source, cfg.concurrency)
            .data("resuming run")?
    } else {
        run_experiment(&excerpts, &lex, source, &experiment_config(cfg))
            .data("running experiment")?
    };

    write_scores_file(&scores_path, &run.records)
        .data(format!("writing {}", scores_path.display()))?;
    write_manifest(&manifest_path, &run.manifest)
        .data(format!("writing {}", manifest_path.display()))?;
    if let Some(p) = provider {
        p.into_cache()
            .save_dir(&cache_dir)
            .data(format!("writing cache {}", cache_dir.display()))?;
    }
    eprintln!(
        "{} scores, {} failed cells -> {}",
        run.records.len(),
        run.manifest.failures.len(),
        scores_path.display()
    );
    check_failures(&run)
}

pub fn analyze(cfg: &RunConfig, scores: Option<&PathBuf>) -> Result<(), CliError> {
    let scores_path = scores.cloned().unwrap_or_else(|| cfg.out.join(SCORES_FILE));
    if !scores_path.exists() {
        return Err(CliError::usage(format!(
            "scores file {} does not exist",
            scores_path.display()
        )));
    }
    let records =
        read_scores_file(&scores_path).data(format!("reading {}", scores_path.display()))?;
    let manifest_path = scores_path.with_file_name(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(read_manifest(&manifest_path).data(format!("reading {}", manifest_path.display()))?)
    } else {
        None
    };
    let (methods, depths) = match &manifest {
        Some(m) => (m.methods.clone(), m.depths.clone()),
        None => (Method::ALL.to_vec(), DEPTHS.to_vec()),
    };
    let hash = manifest
        .as_ref()
        .map(|m| m.content_hash())
        .transpose()
        .data("hashing manifest")?;
    let report = build_report(&records, &methods, &depths, hash).data("building report")?;
    let dir = create_out(cfg)?.join(REPORT_DIR);
    write_report(&dir, &report).data(format!("writing report to {}", dir.display()))?;

    println!("method           depth  n_pairs  pearson_r  emd_separation  syn_median  rand_median");
    for s in &report.summaries {
        println!(
            "{:<16} {:>5}  {:>7}  {:>9}  {:>14.6e}  {:>10.6}  {:>11.6}",
            s.method.as_str(),
            s.depth,
            s.n_pairs,
            s.pearson_r
                .map_or("undefined".to_owned(), |r| format!("{r:.4}")),
            s.emd_separation,
            s.synonym_median,
            s.random_median
        );
    }
    for m in &report.missing {
        eprintln!("missing {} depth {}: {}", m.method, m.depth, m.reason);
    }
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let excerpts = dataset(cfg)?;
    let bins = match histogram_export(&excerpts, cfg.bin_width) {
        Err(e @ StatsError::BadBinWidth(_)) => return Err(CliError::usage(e)),
        other => other.data("building histogram")?,
    };
    let stats = corpus_stats(&excerpts).data("computing statistics")?;
    let out = create_out(cfg)?;
    write_stats_csv(&out.join(STATS_FILE), &stats).data("writing statistics")?;
    write_histogram_csv(&out.join(HISTOGRAM_FILE), &bins, cfg.bin_width)
        .data("writing histogram")?;
    println!(
        "count {} mean {:.2} median {} min {} max {} std {:.2} (population)",
        stats.count, stats.mean, stats.median, stats.min, stats.max, stats.std
    );
    Ok(())
}
