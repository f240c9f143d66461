//! Embedding vectors, cosine geometry and the toy black-box embedder.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::error::{Error, Result};

/// Smallest admissible embedding dimension: masking needs slot 0 plus content.
pub const MIN_DIM: usize = 2;

/// A fixed-dimension real vector with an optional ISO-639-1 language tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lang: Option<String>,
}

impl Embedding {
    /// Builds an embedding, rejecting non-finite components and dimensions below 2.
    pub fn new(values: Vec<f64>, lang: Option<String>) -> Result<Self> {
        if values.len() < MIN_DIM {
            return Err(Error::InvalidEmbedding(format!(
                "dimension {} is below the minimum of {MIN_DIM}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!(
                "component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values, lang })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], None)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn lang(&self) -> Option<&str> {
        self.lang.as_deref()
    }

    pub fn with_lang(mut self, lang: impl Into<String>) -> Self {
        self.lang = Some(lang.into());
        self
    }

    pub fn set_lang(&mut self, lang: Option<String>) {
        self.lang = lang;
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Returns a unit-norm copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|v| v / norm).collect(),
            lang: self.lang.clone(),
        }
    }

    /// Replaces the components, keeping the language tag. The caller keeps
    /// the dimension and finiteness invariants.
    pub(crate) fn map_values(&self, f: impl FnMut(&f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(f).collect(),
            lang: self.lang.clone(),
        }
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            });
        }
        Ok(())
    }
}

/// Cosine similarity clamped to [-1, 1]. If either side is the zero vector
/// the similarity is defined as 0.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    b.check_dim(a.dim())?;
    Ok(cosine_slices(a.values(), b.values()))
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// An identified, language-tagged text record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub text: String,
    pub lang: String,
}

impl TextSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, lang: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            lang: lang.into(),
        }
    }
}

/// An encoder reachable only through embed queries.
///
/// Implementations must be deterministic and count every embedded text
/// exactly once in [`queries_used`](BlackBoxEmbedder::queries_used).
pub trait BlackBoxEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding>;

    fn dimension(&self) -> usize;

    fn queries_used(&self) -> u64;

    /// Embeds a batch, one query per text. Remote embedders override this
    /// to use a single round trip.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<E: BlackBoxEmbedder + ?Sized> BlackBoxEmbedder for &E {
    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn queries_used(&self) -> u64 {
        (**self).queries_used()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

/// Configuration of the hashed character n-gram embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramConfig {
    /// Highest character n-gram order; every order 1..=n contributes.
    pub n: usize,
    pub dim: usize,
    /// Salt for the feature hash.
    pub seed: u64,
    pub unit_norm: bool,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            n: 4,
            dim: 512,
            seed: 0,
            unit_norm: true,
        }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_DIM {
            return Err(Error::Config(format!(
                "embedding dimension must be at least {MIN_DIM}, got {}",
                self.dim
            )));
        }
        if self.n < 1 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Hashed character n-gram embedding of `text` under `config`.
///
/// Each character n-gram (orders 1 through `config.n`) is hashed with a
/// seeded xxHash64. The low bit picks the sign and the remaining bits pick
/// the bucket, so colliding features cancel rather than pile up.
pub fn embed_ngram(text: &str, config: &NgramConfig) -> Result<Embedding> {
    config.validate()?;
    let mut values = vec![0.0; config.dim];
    let chars: Vec<char> = text.chars().collect();
    let mut buf = String::new();
    for order in 1..=config.n.min(chars.len()) {
        for window in chars.windows(order) {
            buf.clear();
            buf.extend(window);
            let h = XxHash64::oneshot(config.seed, buf.as_bytes());
            let bucket = ((h >> 1) % config.dim as u64) as usize;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        }
    }
    if config.unit_norm {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Embedding::new(values, None)
}

/// The toy black box: [`embed_ngram`] behind a query counter.
#[derive(Debug)]
pub struct NgramEmbedder {
    config: NgramConfig,
    queries: AtomicU64,
}

impl NgramEmbedder {
    pub fn new(config: NgramConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            queries: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }
}

impl BlackBoxEmbedder for NgramEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        embed_ngram(text, &self.config)
    }

    fn dimension(&self) -> usize {
        self.config.dim
    }

    fn queries_used(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}
