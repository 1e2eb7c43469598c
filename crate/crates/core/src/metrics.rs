//! Text metrics (BLEU-2, ROUGE-L) and length/search statistics.
//!
//! Text is lowercased and split on Unicode whitespace; punctuation stays
//! attached to its token. BLEU-2 is unsmoothed: any zero modified precision
//! gives zero. When neither side has a bigram (both single-token) the
//! bigram precision is taken as 1.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::SearchResult;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{0} needs at least one result")]
    Empty(&'static str),
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped matches and candidate n-gram total.
fn modified_precision(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

pub fn bleu2_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let (m1, t1) = modified_precision(candidate, reference, 1);
    let p1 = m1 as f64 / t1 as f64;
    let (m2, t2) = modified_precision(candidate, reference, 2);
    let p2 = if t2 == 0 {
        if reference.len() < 2 {
            1.0
        } else {
            0.0
        }
    } else {
        m2 as f64 / t2 as f64
    };
    if p1 == 0.0 || p2 == 0.0 {
        return 0.0;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (p1 * p2).sqrt()
}

/// Sentence-level BLEU with uniform weights over unigrams and bigrams.
pub fn bleu2(candidate: &str, reference: &str) -> f64 {
    bleu2_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> RougeL {
    match (candidate.is_empty(), reference.is_empty()) {
        (true, true) => {
            return RougeL {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            }
        }
        (true, false) | (false, true) => {
            return RougeL {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            }
        }
        _ => {}
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeL {
        precision,
        recall,
        f1,
    }
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeL {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthErrorStats {
    pub mean_abs_error: f64,
    pub exact_rate: f64,
    pub k: usize,
    pub within_k_rate: f64,
}

/// Statistics over `(estimated, oracle)` length pairs.
pub fn length_error_stats(
    pairs: &[(usize, usize)],
    k: usize,
) -> Result<LengthErrorStats, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("length_error_stats"));
    }
    let n = pairs.len() as f64;
    let errors: Vec<usize> = pairs
        .iter()
        .map(|&(est, oracle)| est.abs_diff(oracle))
        .collect();
    Ok(LengthErrorStats {
        mean_abs_error: errors.iter().sum::<usize>() as f64 / n,
        exact_rate: errors.iter().filter(|&&e| e == 0).count() as f64 / n,
        k,
        within_k_rate: errors.iter().filter(|&&e| e <= k).count() as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchCostStats {
    pub mean_probe_count: f64,
    pub max_probe_count: usize,
}

pub fn search_cost_stats<'a, I>(results: I) -> Result<SearchCostStats, MetricsError>
where
    I: IntoIterator<Item = &'a SearchResult>,
{
    let counts: Vec<usize> = results.into_iter().map(|r| r.probe_count).collect();
    if counts.is_empty() {
        return Err(MetricsError::Empty("search_cost_stats"));
    }
    Ok(SearchCostStats {
        mean_probe_count: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        max_probe_count: counts.iter().copied().max().unwrap_or(0),
    })
}
