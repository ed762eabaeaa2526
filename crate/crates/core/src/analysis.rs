//! Score-distribution analysis: empirical CDFs, EMD separation between
//! synonym and random scores, scatter pairing, Pearson correlation and the
//! per-(method, depth) report with its plot-ready exports.
//!
//! Scores are compared only within one method. DDR is a raw ratio on
//! `[0, inf)` while the pooled cosines live on `[-1, 1]`, so raw EMD values
//! are not comparable across methods; the report says so.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::ddr::Method;
use crate::experiment::ScoreRecord;
use crate::perturbation::Kind;
use crate::transport::{emd_1d_unit_mass, TransportError};

pub const NATIVE_SCALE_CAVEAT: &str = "EMD separation is measured on each method's native score scale \
(DDR is an unbounded ratio, the pooled cosines lie in [-1, 1]); compare EMD values within a method, \
not across methods.";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample value {index} is not finite")]
    NonFinite { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("pearson needs at least 2 pairs (got {0})")]
    TooFewPairs(usize),
    #[error("pearson is undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Right-continuous step function: `heights[k]` is the fraction of samples
/// `<= values[k]`. Tied samples share one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcdfCurve {
    values: Vec<f64>,
    heights: Vec<f64>,
    n: usize,
}

impl EcdfCurve {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.values.partition_point(|&v| v <= x) {
            0 => 0.0,
            k => self.heights[k - 1],
        }
    }
}

fn check_finite(xs: &[f64]) -> Result<(), AnalysisError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(AnalysisError::NonFinite { index }),
        None => Ok(()),
    }
}

pub fn ecdf(samples: &[f64]) -> Result<EcdfCurve, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    check_finite(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut values = Vec::new();
    let mut heights = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i + 1 < n && sorted[i + 1] == v {
            continue;
        }
        values.push(v);
        heights.push((i + 1) as f64 / n as f64);
    }
    Ok(EcdfCurve { values, heights, n })
}

/// Each score list is a unit mass spread uniformly over its samples.
pub fn separation_emd(synonym: &[f64], random: &[f64]) -> Result<f64, AnalysisError> {
    if synonym.is_empty() || random.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    Ok(emd_1d_unit_mass(synonym, random)?)
}

/// Product-moment correlation from mean-centred sums, clamped to `[-1, 1]`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooFewPairs(xs.len()));
    }
    check_finite(xs)?;
    check_finite(ys)?;
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(AnalysisError::ZeroVariance("x"));
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(AnalysisError::ZeroVariance("y"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub source_id: String,
    /// Random-kind score.
    pub x: f64,
    /// Synonym-kind score.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ScatterPairs {
    pub points: Vec<ScatterPoint>,
    /// Sources with a record at this (method, depth) but not of both kinds.
    pub excluded: Vec<String>,
}

impl ScatterPairs {
    pub fn above_diagonal_fraction(&self) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let above = self.points.iter().filter(|p| p.y > p.x).count();
        Some(above as f64 / self.points.len() as f64)
    }
}

/// Points ordered by source id.
pub fn scatter_pairs(records: &[ScoreRecord], method: Method, depth: u8) -> ScatterPairs {
    let mut by_source: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.method == method && r.depth == depth)
    {
        let slot = by_source.entry(&r.source_id).or_default();
        match r.kind {
            Kind::Random => slot.0 = Some(r.score),
            Kind::Synonym => slot.1 = Some(r.score),
        }
    }
    let mut out = ScatterPairs::default();
    for (id, pair) in by_source {
        match pair {
            (Some(x), Some(y)) => out.points.push(ScatterPoint {
                source_id: id.to_owned(),
                x,
                y,
            }),
            _ => out.excluded.push(id.to_owned()),
        }
    }
    out
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodDepthSummary {
    pub method: Method,
    pub depth: u8,
    /// `None` when undefined; see `pearson_note`.
    pub pearson_r: Option<f64>,
    pub pearson_note: Option<String>,
    pub emd_separation: f64,
    /// Sources contributing a (random, synonym) scatter point.
    pub n_pairs: usize,
    pub n_synonym: usize,
    pub n_random: usize,
    pub excluded_sources: usize,
    pub synonym_median: f64,
    pub random_median: f64,
    pub above_diagonal_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingCell {
    pub method: Method,
    pub depth: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveExport {
    pub method: Method,
    pub depth: u8,
    pub kind: Kind,
    pub curve: EcdfCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterExport {
    pub method: Method,
    pub depth: u8,
    pub pairs: ScatterPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub manifest_hash: Option<String>,
    pub summaries: Vec<MethodDepthSummary>,
    pub missing: Vec<MissingCell>,
    pub caveat: &'static str,
    #[serde(skip)]
    pub curves: Vec<CurveExport>,
    #[serde(skip)]
    pub scatters: Vec<ScatterExport>,
}

impl Report {
    pub fn summary(&self, method: Method, depth: u8) -> Option<&MethodDepthSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.depth == depth)
    }

    pub fn to_json(&self) -> Result<String, AnalysisError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn scores(records: &[ScoreRecord], method: Method, depth: u8, kind: Kind) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.method == method && r.depth == depth && r.kind == kind)
        .map(|r| r.score)
        .collect()
}

/// One summary per expected (method, depth) cell that has scores of both
/// kinds; the others are listed as missing.
pub fn build_report(
    records: &[ScoreRecord],
    methods: &[Method],
    depths: &[u8],
    manifest_hash: Option<String>,
) -> Result<Report, AnalysisError> {
    let mut report = Report {
        manifest_hash,
        summaries: Vec::new(),
        missing: Vec::new(),
        caveat: NATIVE_SCALE_CAVEAT,
        curves: Vec::new(),
        scatters: Vec::new(),
    };
    for &method in methods {
        for &depth in depths {
            let syn = scores(records, method, depth, Kind::Synonym);
            let rnd = scores(records, method, depth, Kind::Random);
            let absent: Vec<&str> = [(&syn, "synonym"), (&rnd, "random")]
                .iter()
                .filter(|(s, _)| s.is_empty())
                .map(|(_, k)| *k)
                .collect();
            if !absent.is_empty() {
                report.missing.push(MissingCell {
                    method,
                    depth,
                    reason: format!("no {} scores", absent.join(" or ")),
                });
                continue;
            }
            let pairs = scatter_pairs(records, method, depth);
            let xs: Vec<f64> = pairs.points.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = pairs.points.iter().map(|p| p.y).collect();
            let (pearson_r, pearson_note) = match pearson(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            report.summaries.push(MethodDepthSummary {
                method,
                depth,
                pearson_r,
                pearson_note,
                emd_separation: separation_emd(&syn, &rnd)?,
                n_pairs: pairs.points.len(),
                n_synonym: syn.len(),
                n_random: rnd.len(),
                excluded_sources: pairs.excluded.len(),
                synonym_median: median(&syn).expect("nonempty"),
                random_median: median(&rnd).expect("nonempty"),
                above_diagonal_fraction: pairs.above_diagonal_fraction(),
            });
            for (kind, sample) in [(Kind::Synonym, &syn), (Kind::Random, &rnd)] {
                report.curves.push(CurveExport {
                    method,
                    depth,
                    kind,
                    curve: ecdf(sample)?,
                });
            }
            report.scatters.push(ScatterExport {
                method,
                depth,
                pairs,
            });
        }
    }
    Ok(report)
}

/// Writes `report.json`, `ecdf.csv`, `scatter.csv` and `reference.csv`
/// (the y = x line over each panel's range) into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> Result<Vec<PathBuf>, AnalysisError> {
    std::fs::create_dir_all(dir)?;
    let hash = report.manifest_hash.clone().unwrap_or_default();
    let paths: Vec<PathBuf> = ["report.json", "ecdf.csv", "scatter.csv", "reference.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();

    std::fs::write(&paths[0], report.to_json()?)?;

    let mut w = csv::Writer::from_path(&paths[1])?;
    w.write_record([
        "manifest_hash",
        "method",
        "depth",
        "kind",
        "value",
        "height",
    ])?;
    for c in &report.curves {
        for (v, h) in c.curve.values().iter().zip(c.curve.heights()) {
            w.write_record([
                hash.as_str(),
                c.method.as_str(),
                &c.depth.to_string(),
                c.kind.as_str(),
                &v.to_string(),
                &h.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths[2])?;
    w.write_record([
        "manifest_hash",
        "method",
        "depth",
        "source_id",
        "random_score",
        "synonym_score",
    ])?;
    for s in &report.scatters {
        for p in &s.pairs.points {
            w.write_record([
                hash.as_str(),
                s.method.as_str(),
                &s.depth.to_string(),
                &p.source_id,
                &p.x.to_string(),
                &p.y.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths[3])?;
    w.write_record(["manifest_hash", "method", "depth", "x", "y"])?;
    for s in &report.scatters {
        let all = s.pairs.points.iter().flat_map(|p| [p.x, p.y]);
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
        if lo > hi {
            continue;
        }
        for v in [lo, hi] {
            w.write_record([
                hash.as_str(),
                s.method.as_str(),
                &s.depth.to_string(),
                &v.to_string(),
                &v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(paths)
}
