//! Seeded synonym and random word substitution.
//!
//! A variant replaces exactly `depth` whitespace-delimited words of a source
//! excerpt. Matching ignores case and surrounding punctuation; the
//! replacement inherits the original's capitalization and gets the
//! punctuation reattached (`"Good,"` → `"Right,"`). Word count never changes.
//!
//! Randomness comes from ChaCha8 streams keyed by the variant seed: stream 0
//! picks positions, stream 1 draws synonyms, stream 2 draws random words.
//! Position choice does not depend on the substitution kind, so the synonym
//! and random variants built from one seed edit the same words whenever the
//! lexicon covers enough of them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Generator family recorded in run metadata.
pub const RNG_NAME: &str = "chacha8 (rand_chacha 0.9, rand 0.9)";

pub const DEPTHS: [u8; 3] = [1, 2, 3];

#[derive(Debug, Error)]
pub enum PerturbationError {
    #[error("edit depth must be 1, 2 or 3 (got {0})")]
    InvalidDepth(u8),
    #[error("excerpt {0:?} has no words")]
    EmptyExcerpt(String),
    #[error("depth {depth} needs {depth} words with synonyms, only {available} available; positions without candidates: {lacking:?}")]
    InsufficientSynonyms {
        depth: u8,
        available: usize,
        lacking: Vec<usize>,
    },
    #[error("depth {depth} needs {depth} substitutable words, only {available} available")]
    InsufficientWords { depth: u8, available: usize },
    #[error("random substitution needs a non-empty vocabulary")]
    EmptyVocabulary,
    #[error("no replacement for position {position} differs from the original word")]
    NoAdmissibleReplacement { position: usize },
    #[error("position {position} out of range for {len} words")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("word at position {position} has no synonym candidates")]
    NoSynonyms { position: usize },
    #[error("{kind} variant at depth {depth}: {source}")]
    Suite {
        depth: u8,
        kind: Kind,
        #[source]
        source: Box<PerturbationError>,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Synonym,
    Random,
}

impl Kind {
    pub const ALL: [Kind; 2] = [Kind::Synonym, Kind::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Synonym => "synonym",
            Kind::Random => "random",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Kind::Synonym => 1,
            Kind::Random => 2,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synonym" => Ok(Kind::Synonym),
            "random" => Ok(Kind::Random),
            other => Err(format!("unknown substitution kind {other:?}")),
        }
    }
}

pub fn check_depth(depth: u8) -> Result<u8, PerturbationError> {
    if DEPTHS.contains(&depth) {
        Ok(depth)
    } else {
        Err(PerturbationError::InvalidDepth(depth))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceExcerpt {
    pub id: String,
    pub text: String,
    words: Vec<String>,
}

impl SourceExcerpt {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, PerturbationError> {
        let id = id.into();
        let text = text.into();
        let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            return Err(PerturbationError::EmptyExcerpt(id));
        }
        Ok(Self { id, text, words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }
}

/// Splits `"(Good,"` into `("(", "Good", ",")`: the core runs from the first
/// to the last alphanumeric character.
fn split_affixes(word: &str) -> (&str, &str, &str) {
    let start = word.find(|c: char| c.is_alphanumeric());
    let end = word
        .char_indices()
        .rfind(|(_, c)| c.is_alphanumeric())
        .map(|(i, c)| i + c.len_utf8());
    match (start, end) {
        (Some(s), Some(e)) => (&word[..s], &word[s..e], &word[e..]),
        _ => (word, "", ""),
    }
}

fn apply_case(original: &str, replacement: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = replacement.chars();
        return match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
    }
    replacement.to_owned()
}

/// Synonym table and random-draw vocabulary. All entries are lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    synonyms: BTreeMap<String, Vec<String>>,
    vocabulary: Vec<String>,
}

impl Lexicon {
    /// Lowercases everything, drops duplicate candidates and duplicate
    /// vocabulary words (first occurrence wins). Rejects empty candidate
    /// lists and lists containing their own headword.
    pub fn new(
        synonyms: impl IntoIterator<Item = (String, Vec<String>)>,
        vocabulary: impl IntoIterator<Item = String>,
    ) -> Result<Self, PerturbationError> {
        let mut table = BTreeMap::new();
        for (head, candidates) in synonyms {
            let head = head.trim().to_lowercase();
            if head.is_empty() {
                return Err(PerturbationError::InvalidLexicon("empty headword".into()));
            }
            let mut seen = HashSet::new();
            let mut list = Vec::new();
            for c in candidates {
                let c = c.trim().to_lowercase();
                if c.is_empty() {
                    continue;
                }
                if c == head {
                    return Err(PerturbationError::InvalidLexicon(format!(
                        "{head:?} lists itself as a synonym"
                    )));
                }
                if seen.insert(c.clone()) {
                    list.push(c);
                }
            }
            if list.is_empty() {
                return Err(PerturbationError::InvalidLexicon(format!(
                    "{head:?} has no synonym candidates"
                )));
            }
            if table.insert(head.clone(), list).is_some() {
                return Err(PerturbationError::InvalidLexicon(format!(
                    "duplicate headword {head:?}"
                )));
            }
        }
        let mut seen = HashSet::new();
        let vocabulary = vocabulary
            .into_iter()
            .map(|w| w.trim().to_lowercase())
            .filter(|w| !w.is_empty() && seen.insert(w.clone()))
            .collect();
        Ok(Self {
            synonyms: table,
            vocabulary,
        })
    }

    /// Reads `headword<TAB>syn1,syn2,...` lines and a one-word-per-line
    /// vocabulary. Blank lines and lines starting with `#` are skipped.
    pub fn load(lexicon: &Path, vocabulary: &Path) -> Result<Self, PerturbationError> {
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(std::fs::File::open(lexicon)?)
            .lines()
            .enumerate()
        {
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (head, rest) =
                trimmed
                    .split_once('\t')
                    .ok_or_else(|| PerturbationError::Parse {
                        path: lexicon.display().to_string(),
                        line: n + 1,
                        message: "expected headword<TAB>synonyms".into(),
                    })?;
            entries.push((
                head.to_owned(),
                rest.split(',').map(str::to_owned).collect(),
            ));
        }
        let mut words = Vec::new();
        for line in BufReader::new(std::fs::File::open(vocabulary)?).lines() {
            let line = line?;
            if !line.trim_start().starts_with('#') {
                words.push(line);
            }
        }
        Self::new(entries, words)
    }

    pub fn synonyms_of(&self, word: &str) -> Option<&[String]> {
        self.synonyms.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn synonyms(&self) -> &BTreeMap<String, Vec<String>> {
        &self.synonyms
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    /// SHA-256 over a canonical rendering of the table and vocabulary.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (head, list) in &self.synonyms {
            h.update(format!("S\t{head}\t{}\n", list.join(",")));
        }
        for w in &self.vocabulary {
            h.update(format!("V\t{w}\n"));
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub source_id: String,
    pub depth: u8,
    pub kind: Kind,
    pub replaced_positions: Vec<usize>,
    /// Position → substituted word (capitalization applied, no punctuation).
    pub replacements: BTreeMap<usize, String>,
    pub text: String,
    pub seed: u64,
}

impl Variant {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `attempt`-th candidate at `depth` under a run seed.
///
/// Kind is deliberately not mixed in: both kinds at one depth share position
/// choice and differ only in the replacement stream.
pub fn variant_seed(seed: u64, depth: u8, attempt: u32) -> u64 {
    mix(mix(mix(seed) ^ u64::from(depth)) ^ u64::from(attempt))
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn positions_for(
    src: &SourceExcerpt,
    depth: u8,
    kind: Kind,
    lex: &Lexicon,
    seed: u64,
) -> Result<Vec<usize>, PerturbationError> {
    let mut with_synonyms = Vec::new();
    let mut substitutable = Vec::new();
    let mut lacking = Vec::new();
    for (i, w) in src.words().iter().enumerate() {
        let (_, core, _) = split_affixes(w);
        if lex.synonyms_of(core).is_some() {
            with_synonyms.push(i);
        } else {
            lacking.push(i);
        }
        if core.chars().any(char::is_alphabetic) {
            substitutable.push(i);
        }
    }
    let depth_n = usize::from(depth);
    let pool = if with_synonyms.len() >= depth_n {
        with_synonyms
    } else if kind == Kind::Synonym {
        return Err(PerturbationError::InsufficientSynonyms {
            depth,
            available: with_synonyms.len(),
            lacking,
        });
    } else if substitutable.len() >= depth_n {
        substitutable
    } else {
        return Err(PerturbationError::InsufficientWords {
            depth,
            available: substitutable.len(),
        });
    };
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng(seed, 0), pool.len(), depth_n)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Substitutes `depth` words of `src`. Deterministic in all arguments.
pub fn generate_variant(
    src: &SourceExcerpt,
    depth: u8,
    kind: Kind,
    lex: &Lexicon,
    seed: u64,
) -> Result<Variant, PerturbationError> {
    check_depth(depth)?;
    if kind == Kind::Random && lex.vocabulary().is_empty() {
        return Err(PerturbationError::EmptyVocabulary);
    }
    let positions = positions_for(src, depth, kind, lex, seed)?;
    substitute_at(src, &positions, depth, kind, lex, seed)
}

/// Like [`generate_variant`] but with caller-chosen positions.
pub fn generate_variant_at(
    src: &SourceExcerpt,
    positions: &[usize],
    kind: Kind,
    lex: &Lexicon,
    seed: u64,
) -> Result<Variant, PerturbationError> {
    let set: BTreeSet<usize> = positions.iter().copied().collect();
    let depth = u8::try_from(set.len()).map_err(|_| PerturbationError::InvalidDepth(u8::MAX))?;
    check_depth(depth)?;
    if let Some(&position) = set.iter().find(|&&p| p >= src.word_count()) {
        return Err(PerturbationError::PositionOutOfRange {
            position,
            len: src.word_count(),
        });
    }
    if kind == Kind::Random && lex.vocabulary().is_empty() {
        return Err(PerturbationError::EmptyVocabulary);
    }
    let positions: Vec<usize> = set.into_iter().collect();
    substitute_at(src, &positions, depth, kind, lex, seed)
}

fn substitute_at(
    src: &SourceExcerpt,
    positions: &[usize],
    depth: u8,
    kind: Kind,
    lex: &Lexicon,
    seed: u64,
) -> Result<Variant, PerturbationError> {
    let mut draw = rng(seed, kind.stream());
    let mut words = src.words().to_vec();
    let mut replacements = BTreeMap::new();
    for &position in positions {
        let (prefix, core, suffix) = split_affixes(&src.words()[position]);
        let lower = core.to_lowercase();
        let picked = match kind {
            Kind::Synonym => lex
                .synonyms_of(core)
                .ok_or(PerturbationError::NoSynonyms { position })?
                .choose(&mut draw)
                .ok_or(PerturbationError::NoSynonyms { position })?,
            Kind::Random => {
                let admissible: Vec<&String> =
                    lex.vocabulary().iter().filter(|w| **w != lower).collect();
                *admissible
                    .choose(&mut draw)
                    .ok_or(PerturbationError::NoAdmissibleReplacement { position })?
            }
        };
        let cased = apply_case(core, picked);
        words[position] = format!("{prefix}{cased}{suffix}");
        replacements.insert(position, cased);
    }
    Ok(Variant {
        source_id: src.id.clone(),
        depth,
        kind,
        replaced_positions: positions.to_vec(),
        replacements,
        text: words.join(" "),
        seed,
    })
}

/// One variant per (depth, kind), ordered by depth then synonym before random.
pub fn generate_suite(
    src: &SourceExcerpt,
    lex: &Lexicon,
    seed: u64,
) -> Result<Vec<Variant>, PerturbationError> {
    let mut suite = Vec::with_capacity(6);
    for depth in DEPTHS {
        for kind in Kind::ALL {
            let v = generate_variant(src, depth, kind, lex, variant_seed(seed, depth, 0)).map_err(
                |e| PerturbationError::Suite {
                    depth,
                    kind,
                    source: Box::new(e),
                },
            )?;
            suite.push(v);
        }
    }
    Ok(suite)
}

/// Accepts a variant only if it tokenizes to the source's length.
pub fn validate_token_length(src_tokens: usize, variant_tokens: usize) -> bool {
    src_tokens == variant_tokens
}

pub fn write_variants_jsonl(path: &Path, variants: &[Variant]) -> Result<(), PerturbationError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in variants {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_variants_jsonl(path: &Path) -> Result<Vec<Variant>, PerturbationError> {
    let mut variants = Vec::new();
    for line in BufReader::new(std::fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            variants.push(serde_json::from_str(&line)?);
        }
    }
    Ok(variants)
}
