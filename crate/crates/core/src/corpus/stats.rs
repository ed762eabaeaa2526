//! Word-count statistics and histogram over a dataset.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::perturbation::SourceExcerpt;

/// The standard deviation divides by N.
pub const STD_CONVENTION: &str = "population";

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("statistics need at least one excerpt")]
    Empty,
    #[error("histogram bin width must be positive (got {0})")]
    BadBinWidth(i64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub count: usize,
    pub mean: f64,
    /// Lower middle value for even counts.
    pub median: usize,
    pub min: usize,
    pub max: usize,
    pub std: f64,
}

pub fn stats_from_counts(counts: &[usize]) -> Result<CorpusStats, StatsError> {
    if counts.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
    let var = sorted
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(CorpusStats {
        count: n,
        mean,
        median: sorted[(n - 1) / 2],
        min: sorted[0],
        max: sorted[n - 1],
        std: var.sqrt(),
    })
}

pub fn corpus_stats(excerpts: &[SourceExcerpt]) -> Result<CorpusStats, StatsError> {
    let counts: Vec<usize> = excerpts.iter().map(SourceExcerpt::word_count).collect();
    stats_from_counts(&counts)
}

/// Left-closed, right-open bins aligned to multiples of `bin_width`, from
/// the bin holding the minimum to the bin holding the maximum. Empty bins in
/// between are kept.
pub fn histogram_from_counts(
    counts: &[usize],
    bin_width: i64,
) -> Result<Vec<(usize, usize)>, StatsError> {
    if bin_width <= 0 {
        return Err(StatsError::BadBinWidth(bin_width));
    }
    let width = bin_width as usize;
    let (Some(&lo), Some(&hi)) = (counts.iter().min(), counts.iter().max()) else {
        return Ok(Vec::new());
    };
    let first = lo / width;
    let mut bins: Vec<(usize, usize)> = (first..=hi / width).map(|b| (b * width, 0)).collect();
    for &c in counts {
        bins[c / width - first].1 += 1;
    }
    Ok(bins)
}

pub fn histogram_export(
    excerpts: &[SourceExcerpt],
    bin_width: i64,
) -> Result<Vec<(usize, usize)>, StatsError> {
    let counts: Vec<usize> = excerpts.iter().map(SourceExcerpt::word_count).collect();
    histogram_from_counts(&counts, bin_width)
}

/// `count,mean,median,min,max,std,std_convention`
pub fn write_stats_csv(path: &Path, stats: &CorpusStats) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "count",
        "mean",
        "median",
        "min",
        "max",
        "std",
        "std_convention",
    ])?;
    w.write_record([
        stats.count.to_string(),
        stats.mean.to_string(),
        stats.median.to_string(),
        stats.min.to_string(),
        stats.max.to_string(),
        stats.std.to_string(),
        STD_CONVENTION.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// `bin_start,bin_end,count`, bins left-closed right-open.
pub fn write_histogram_csv(
    path: &Path,
    bins: &[(usize, usize)],
    bin_width: i64,
) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_start", "bin_end", "count"])?;
    for (start, count) in bins {
        w.write_record([
            start.to_string(),
            (start + bin_width as usize).to_string(),
            count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_and_median_of_three() {
        let s = stats_from_counts(&[122, 13, 42]).unwrap();
        assert_eq!((s.min, s.median, s.max), (13, 42, 122));
    }

    #[test]
    fn single_excerpt() {
        let e =
            SourceExcerpt::new("a", "one two three four five six seven eight nine ten").unwrap();
        let s = corpus_stats(&[e]).unwrap();
        assert_eq!((s.count, s.median, s.min, s.max), (1, 10, 10, 10));
        assert_eq!(s.mean, 10.0);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn lower_median_and_population_std() {
        let s = stats_from_counts(&[1, 2, 3, 4]).unwrap();
        assert_eq!(s.median, 2);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!(matches!(stats_from_counts(&[]), Err(StatsError::Empty)));
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(
            histogram_from_counts(&[10, 10, 20], 10).unwrap(),
            vec![(10, 2), (20, 1)]
        );
        assert_eq!(
            histogram_from_counts(&[3, 27], 10).unwrap(),
            vec![(0, 1), (10, 0), (20, 1)]
        );
        assert!(matches!(
            histogram_from_counts(&[1], 0),
            Err(StatsError::BadBinWidth(0))
        ));
        assert!(matches!(
            histogram_from_counts(&[1], -5),
            Err(StatsError::BadBinWidth(-5))
        ));
    }
}
