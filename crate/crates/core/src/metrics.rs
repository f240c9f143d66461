//! Reconstruction metrics (BLEU-4, ROUGE-1 recall, token F1, exact match,
//! cosine) and NDCG@k for retrieval.
//!
//! Tokenization is pinned so that every score is reproducible bit for bit:
//! NFC normalization, lowercasing, punctuation split into separate tokens,
//! then whitespace splitting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.nfc().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Size of the clipped multiset intersection.
fn clipped_overlap(
    pred: &HashMap<&[String], usize>,
    reference: &HashMap<&[String], usize>,
) -> usize {
    pred.iter()
        .map(|(gram, c)| (*c).min(reference.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// Sentence BLEU-4 on a 0-100 scale.
///
/// Modified n-gram precisions for n = 1..4 are combined by geometric mean;
/// a zero precision is replaced by `1 / (2c)` where `c` is the prediction
/// length. The brevity penalty is `exp(1 - r/c)` when `c < r`. Two empty
/// strings score 100, exactly one empty string scores 0.
pub fn bleu(pred: &str, reference: &str) -> f64 {
    let p = tokenize(pred);
    let r = tokenize(reference);
    match (p.is_empty(), r.is_empty()) {
        (true, true) => return 100.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let c = p.len() as f64;
    let rl = r.len() as f64;
    // Orders longer than the prediction have no n-grams at all and are left
    // out of the mean, so identical short texts still score 100.
    let orders = p.len().min(4);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let pc = ngram_counts(&p, n);
        let rc = ngram_counts(&r, n);
        let total = p.len() - (n - 1);
        let matched = clipped_overlap(&pc, &rc);
        let precision = if matched == 0 {
            1.0 / (2.0 * c)
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let bp = if c < rl { (1.0 - rl / c).exp() } else { 1.0 };
    100.0 * bp * (log_sum / orders as f64).exp()
}

/// Clipped unigram overlap divided by the reference length.
pub fn rouge1_recall(pred: &str, reference: &str) -> f64 {
    let p = tokenize(pred);
    let r = tokenize(reference);
    if r.is_empty() {
        return if p.is_empty() { 1.0 } else { 0.0 };
    }
    let overlap = clipped_overlap(&ngram_counts(&p, 1), &ngram_counts(&r, 1));
    overlap as f64 / r.len() as f64
}

/// Harmonic mean of multiset-overlap precision and recall.
pub fn token_f1(pred: &str, reference: &str) -> f64 {
    let p = tokenize(pred);
    let r = tokenize(reference);
    match (p.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let overlap = clipped_overlap(&ngram_counts(&p, 1), &ngram_counts(&r, 1)) as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let precision = overlap / p.len() as f64;
    let recall = overlap / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Case-sensitive equality after NFC normalization.
pub fn is_exact(pred: &str, reference: &str) -> bool {
    pred.nfc().eq(reference.nfc())
}

/// Percentage of pairs that match exactly.
pub fn exact_match<P: AsRef<str>, R: AsRef<str>>(pairs: &[(P, R)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("prediction/reference pairs"));
    }
    let hits = pairs
        .iter()
        .filter(|(p, r)| is_exact(p.as_ref(), r.as_ref()))
        .count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

/// NDCG@k with exponential gain `2^rel - 1` and `log2(i + 1)` discount.
/// Returns 0 when no document is relevant.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], qrels: &HashMap<String, u32>, k: usize) -> f64 {
    let gain = |rel: u32| 2f64.powi(rel as i32) - 1.0;
    let discount = |i: usize| (i as f64 + 2.0).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc)| gain(qrels.get(doc.as_ref()).copied().unwrap_or(0)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = qrels.values().copied().filter(|r| *r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, rel)| gain(*rel) / discount(i))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// One row of reconstruction quality, for a single pair or an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub rouge1_recall: f64,
    pub token_f1: f64,
    /// Percentage in [0, 100].
    pub exact_match: f64,
    pub cos: f64,
    pub num_tokens_ref: f64,
    pub num_tokens_pred: f64,
    /// Number of prediction/reference pairs behind this report.
    pub pairs: usize,
}

impl MetricReport {
    /// Scores one prediction against its reference; `cos` is the cosine
    /// between their embeddings.
    pub fn for_pair(pred: &str, reference: &str, cos: f64) -> Self {
        Self {
            bleu: bleu(pred, reference),
            rouge1_recall: rouge1_recall(pred, reference),
            token_f1: token_f1(pred, reference),
            exact_match: if is_exact(pred, reference) {
                100.0
            } else {
                0.0
            },
            cos,
            num_tokens_ref: tokenize(reference).len() as f64,
            num_tokens_pred: tokenize(pred).len() as f64,
            pairs: 1,
        }
    }
}

/// Field-wise arithmetic mean; exact match is re-weighted by pair count so
/// it stays a percentage over the underlying pairs.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::Empty("metric reports"));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let pairs: usize = reports.iter().map(|r| r.pairs).sum();
    let exact_match = if pairs == 0 {
        mean(|r| r.exact_match)
    } else {
        reports
            .iter()
            .map(|r| r.exact_match * r.pairs as f64)
            .sum::<f64>()
            / pairs as f64
    };
    Ok(MetricReport {
        bleu: mean(|r| r.bleu),
        rouge1_recall: mean(|r| r.rouge1_recall),
        token_f1: mean(|r| r.token_f1),
        exact_match,
        cos: mean(|r| r.cos),
        num_tokens_ref: mean(|r| r.num_tokens_ref),
        num_tokens_pred: mean(|r| r.num_tokens_pred),
        pairs,
    })
}
