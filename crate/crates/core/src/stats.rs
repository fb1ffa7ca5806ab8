//! Corpus statistics: label prevalence, size histograms, and unsafe-type
//! co-occurrence.
//!
//! These reports exist to sanity-check a dataset before training on it —
//! class balance drives the class-weighting default, the deep/semantic size
//! distributions show how much callee expansion inflates functions, and the
//! co-occurrence matrix reveals which unsafe types travel together.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, FunctionIndex, NUM_CLASSES};
use crate::features::{deep_size, ExpansionConfig};

/// One labeled counting bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Human-readable range label.
    pub label: String,
    /// Functions in the bucket.
    pub count: u64,
}

/// A list of buckets whose counts sum to the corpus size.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    /// Buckets in range order; empty leading/trailing buckets are omitted.
    pub buckets: Vec<HistogramBucket>,
}

impl Histogram {
    /// Total mass across buckets.
    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum()
    }
}

/// Bucket index for a deep size: `0`, then one bucket per power of two.
fn size_bucket(deep: u64) -> usize {
    if deep == 0 {
        0
    } else {
        1 + deep.ilog2() as usize
    }
}

fn size_bucket_label(bucket: usize) -> String {
    match bucket {
        0 => "0".to_owned(),
        1 => "1".to_owned(),
        b => {
            let lo = 1u64 << (b - 1);
            let hi = (1u64 << b) - 1;
            format!("{lo}-{hi}")
        }
    }
}

/// Semantic-size bucket edges; the last bucket is open-ended.
const SEMANTIC_EDGES: [f64; 7] = [1.0, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0];

fn semantic_bucket(semantic: f64) -> usize {
    SEMANTIC_EDGES
        .iter()
        .rposition(|edge| semantic >= *edge)
        .unwrap_or(0)
}

fn semantic_bucket_label(bucket: usize) -> String {
    if bucket + 1 < SEMANTIC_EDGES.len() {
        format!("[{:.2},{:.2})", SEMANTIC_EDGES[bucket], SEMANTIC_EDGES[bucket + 1])
    } else {
        format!(">={:.2}", SEMANTIC_EDGES[bucket])
    }
}

fn histogram_from_counts<L: Fn(usize) -> String>(counts: &[u64], label: L) -> Histogram {
    let last = match counts.iter().rposition(|c| *c > 0) {
        Some(i) => i,
        None => return Histogram::default(),
    };
    Histogram {
        buckets: (0..=last)
            .map(|i| HistogramBucket {
                label: label(i),
                count: counts[i],
            })
            .collect(),
    }
}

/// Safe/unsafe/bug prevalence as unit fractions of the corpus.
///
/// `safe + unsafe_count` is the corpus size; the bug count is a subset of it
/// and may be zero.
pub fn label_fractions(safe: u64, unsafe_count: u64, bug: u64) -> (f64, f64, f64) {
    let total = (safe + unsafe_count) as f64;
    if total == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    (
        safe as f64 / total,
        unsafe_count as f64 / total,
        bug as f64 / total,
    )
}

/// Everything the `stats` subcommand reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    /// Corpus name.
    pub corpus: String,
    /// Total functions.
    pub functions: u64,
    /// Functions labeled `{0}`.
    pub safe: u64,
    /// Functions with at least one unsafe type.
    #[serde(rename = "unsafe")]
    pub unsafe_count: u64,
    /// Functions flagged as buggy.
    pub bug: u64,
    /// `safe / functions`.
    pub safe_fraction: f64,
    /// `unsafe / functions`.
    pub unsafe_fraction: f64,
    /// `bug / functions`.
    pub bug_fraction: f64,
    /// Function count per label class; index 0 is the safe count.
    pub per_type: Vec<u64>,
    /// `co_occurrence[i][j]` counts functions whose label set contains both
    /// `i` and `j`; the diagonal equals `per_type`.
    pub co_occurrence: Vec<Vec<u64>>,
    /// Deep-size distribution in power-of-two buckets.
    pub size_histogram: Histogram,
    /// Semantic-size (deep/shallow) distribution in fixed ratio buckets.
    pub semantic_histogram: Histogram,
}

/// Compute corpus statistics, using the same callee-expansion rules as
/// feature extraction for deep sizes.
pub fn corpus_stats(
    corpus: &Corpus,
    index: &FunctionIndex<'_>,
    config: &ExpansionConfig,
) -> Result<StatsReport, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }

    let sizes: Vec<_> = corpus
        .functions
        .par_iter()
        .map(|f| deep_size(&f.function, index, config))
        .collect();

    let mut per_type = vec![0u64; NUM_CLASSES];
    let mut co_occurrence = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    let mut safe = 0u64;
    let mut bug = 0u64;
    let mut size_counts = vec![0u64; 65];
    let mut semantic_counts = vec![0u64; SEMANTIC_EDGES.len()];

    for (f, size) in corpus.functions.iter().zip(&sizes) {
        if f.labels.is_safe() {
            safe += 1;
            per_type[0] += 1;
            co_occurrence[0][0] += 1;
        } else {
            let types: Vec<usize> = f.labels.iter().map(usize::from).collect();
            for &a in &types {
                per_type[a] += 1;
                for &b in &types {
                    co_occurrence[a][b] += 1;
                }
            }
        }
        if f.bug == Some(true) {
            bug += 1;
        }
        size_counts[size_bucket(size.deep)] += 1;
        semantic_counts[semantic_bucket(size.semantic)] += 1;
    }

    let functions = corpus.len() as u64;
    let unsafe_count = functions - safe;
    let (safe_fraction, unsafe_fraction, bug_fraction) =
        label_fractions(safe, unsafe_count, bug);
    Ok(StatsReport {
        corpus: corpus.name.clone(),
        functions,
        safe,
        unsafe_count,
        bug,
        safe_fraction,
        unsafe_fraction,
        bug_fraction,
        per_type,
        co_occurrence,
        size_histogram: histogram_from_counts(&size_counts, size_bucket_label),
        semantic_histogram: histogram_from_counts(&semantic_counts, semantic_bucket_label),
    })
}
