//! Command-line flags, `DDRBENCH_*` environment variables and the optional
//! TOML config file, merged with precedence flag > env > file > default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ddr_core::ddr::CentroidSpan;
use ddr_core::Method;
use serde::Deserialize;

use crate::exit::{CliError, ResultExt};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_BIN_WIDTH: i64 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "ddrbench",
    version,
    about = "DDR similarity and the substitution perturbation benchmark"
)]
pub struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true, env = "DDRBENCH_CONFIG")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "DDRBENCH_OUT")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the six variants (depths 1-3, synonym and random) of every excerpt.
    Perturb {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, env = "DDRBENCH_SEED")]
        seed: Option<u64>,
    },
    /// Embed originals and variants through a provider into a corpus file.
    Embed {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, env = "DDRBENCH_PROVIDER_URL")]
        provider_url: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the experiment and write scores.csv and manifest.json.
    Score {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Complete an interrupted run found in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Summaries, ECDF curves and scatter data from a scored run.
    Analyze {
        /// Scores CSV; defaults to `<out>/scores.csv`.
        #[arg(long, env = "DDRBENCH_SCORES")]
        scores: Option<PathBuf>,
    },
    /// Word-count statistics and histogram of a dataset.
    Stats {
        #[arg(long, env = "DDRBENCH_DATASET")]
        dataset: Option<PathBuf>,
        #[arg(long, env = "DDRBENCH_BIN_WIDTH", allow_negative_numbers = true)]
        bin_width: Option<i64>,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// JSON Lines of {"id", "text"}.
    #[arg(long, env = "DDRBENCH_DATASET")]
    pub dataset: Option<PathBuf>,
    /// `headword<TAB>syn1,syn2,...` per line.
    #[arg(long, env = "DDRBENCH_LEXICON")]
    pub lexicon: Option<PathBuf>,
    /// One replacement word per line for random substitutions.
    #[arg(long, env = "DDRBENCH_VOCAB")]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Embedding provider endpoint.
    #[arg(long, env = "DDRBENCH_PROVIDER_URL", conflicts_with = "corpus")]
    pub provider_url: Option<String>,
    /// Prebuilt corpus file.
    #[arg(long, env = "DDRBENCH_CORPUS")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, env = "DDRBENCH_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated edit depths.
    #[arg(long, env = "DDRBENCH_DEPTHS", value_delimiter = ',')]
    pub depths: Option<Vec<u8>>,
    /// Comma-separated methods: ddr, centroid_cosine, eos_cosine.
    #[arg(long, env = "DDRBENCH_METHODS", value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Excerpts in flight at once.
    #[arg(long, env = "DDRBENCH_CONCURRENCY")]
    pub concurrency: Option<usize>,
    /// Average the EOS vector into the centroid as well.
    #[arg(long, env = "DDRBENCH_CENTROID_INCLUDES_EOS")]
    pub centroid_includes_eos: Option<bool>,
}

/// Keys accepted in the config file; names match the long flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub provider_url: Option<String>,
    pub corpus: Option<PathBuf>,
    pub seed: Option<u64>,
    pub depths: Option<Vec<u8>>,
    pub methods: Option<Vec<Method>>,
    pub out: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub bin_width: Option<i64>,
    pub centroid_includes_eos: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).usage(format!("reading config {}", path.display()))?;
        toml::from_str(&text).usage(format!("parsing config {}", path.display()))
    }
}

/// Where embeddings come from.
#[derive(Debug, Clone)]
pub enum Source {
    Provider(String),
    Corpus(PathBuf),
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub source: Option<Source>,
    pub seed: u64,
    pub depths: Vec<u8>,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub concurrency: usize,
    pub bin_width: i64,
    pub centroid_span: CentroidSpan,
}

impl RunConfig {
    pub fn dataset(&self) -> Result<&Path, CliError> {
        require(&self.dataset, "--dataset")
    }

    pub fn lexicon(&self) -> Result<&Path, CliError> {
        require(&self.lexicon, "--lexicon")
    }

    pub fn vocab(&self) -> Result<&Path, CliError> {
        require(&self.vocab, "--vocab")
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    let p = p.as_deref().ok_or_else(|| {
        CliError::usage(format!(
            "{flag} is required (flag, DDRBENCH_ env or config file)"
        ))
    })?;
    if !p.exists() {
        return Err(CliError::usage(format!(
            "{flag} path {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

#[derive(Default)]
struct Layer<'a> {
    inputs: Option<&'a Inputs>,
    provider_url: Option<&'a Option<String>>,
    corpus: Option<&'a Option<PathBuf>>,
    run: Option<&'a RunArgs>,
    seed: Option<u64>,
    dataset: Option<&'a Option<PathBuf>>,
    bin_width: Option<i64>,
}

pub fn resolve(cli: &Cli, file: FileConfig) -> Result<RunConfig, CliError> {
    let mut l = Layer::default();
    match &cli.command {
        Command::Perturb { inputs, seed } => {
            l.inputs = Some(inputs);
            l.seed = *seed;
        }
        Command::Embed {
            inputs,
            provider_url,
            run,
        } => {
            l.inputs = Some(inputs);
            l.provider_url = Some(provider_url);
            l.run = Some(run);
        }
        Command::Score {
            inputs,
            source,
            run,
            ..
        } => {
            l.inputs = Some(inputs);
            l.provider_url = Some(&source.provider_url);
            l.corpus = Some(&source.corpus);
            l.run = Some(run);
        }
        Command::Analyze { .. } => {}
        Command::Stats { dataset, bin_width } => {
            l.dataset = Some(dataset);
            l.bin_width = *bin_width;
        }
    }

    let flag_path = |get: fn(&Inputs) -> &Option<PathBuf>| l.inputs.and_then(|i| get(i).clone());
    let dataset = l
        .dataset
        .cloned()
        .flatten()
        .or_else(|| flag_path(|i| &i.dataset))
        .or(file.dataset);
    let lexicon = flag_path(|i| &i.lexicon).or(file.lexicon);
    let vocab = flag_path(|i| &i.vocab).or(file.vocab);

    // A source given on the command line or in the environment shadows
    // both source keys of the config file.
    let flag_provider = l.provider_url.cloned().flatten();
    let flag_corpus = l.corpus.cloned().flatten();
    let (provider, corpus) = if flag_provider.is_some() || flag_corpus.is_some() {
        (flag_provider, flag_corpus)
    } else {
        (file.provider_url, file.corpus)
    };
    let source = match (provider, corpus) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "set exactly one of --provider-url and --corpus",
            ));
        }
        (Some(url), None) => Some(Source::Provider(url)),
        (None, Some(path)) => Some(Source::Corpus(path)),
        (None, None) => None,
    };

    let run = l.run;
    let seed = l
        .seed
        .or_else(|| run.and_then(|r| r.seed))
        .or(file.seed)
        .unwrap_or(DEFAULT_SEED);
    let depths = run
        .and_then(|r| r.depths.clone())
        .or(file.depths)
        .unwrap_or_else(|| ddr_core::perturbation::DEPTHS.to_vec());
    for &d in &depths {
        ddr_core::perturbation::check_depth(d).usage("--depths")?;
    }
    let mut methods = run
        .and_then(|r| r.methods.clone())
        .or(file.methods)
        .unwrap_or_else(|| Method::ALL.to_vec());
    methods.sort();
    methods.dedup();
    let mut depths = depths;
    depths.sort();
    depths.dedup();
    if methods.is_empty() || depths.is_empty() {
        return Err(CliError::usage("--methods and --depths must be nonempty"));
    }
    let concurrency = run
        .and_then(|r| r.concurrency)
        .or(file.concurrency)
        .unwrap_or(DEFAULT_CONCURRENCY);
    if concurrency == 0 {
        return Err(CliError::usage("--concurrency must be at least 1"));
    }
    let bin_width = l.bin_width.or(file.bin_width).unwrap_or(DEFAULT_BIN_WIDTH);
    let includes_eos = run
        .and_then(|r| r.centroid_includes_eos)
        .or(file.centroid_includes_eos)
        .unwrap_or(false);
    let out =
        cli.out.clone().or(file.out).ok_or_else(|| {
            CliError::usage("--out is required (flag, DDRBENCH_OUT or config file)")
        })?;

    Ok(RunConfig {
        dataset,
        lexicon,
        vocab,
        source,
        seed,
        depths,
        methods,
        out,
        concurrency,
        bin_width,
        centroid_span: if includes_eos {
            CentroidSpan::ContentAndEos
        } else {
            CentroidSpan::Content
        },
    })
}
