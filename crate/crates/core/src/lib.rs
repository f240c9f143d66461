//! A desk-scale laboratory for black-box text embedding inversion.
//!
//! The crate bundles every piece needed to play both sides of the
//! embeddings-as-a-service threat model:
//!
//! - [`embedding`]: the embedding value type, cosine geometry and a
//!   deterministic hashed character n-gram embedder used as the black box.
//! - [`inversion`]: greedy base hypotheses followed by sequence-level beam
//!   search corrections that maximize cosine similarity to a leaked
//!   embedding, plus an exhaustive oracle for small search spaces.
//! - [`defenses`]: Gaussian noise insertion, language-id masking of
//!   dimension 0 and language-agnostic mean subtraction.
//! - [`metrics`]: BLEU-4, ROUGE-1 recall, token F1, exact match and NDCG@k.
//! - [`retrieval`]: brute-force dense retrieval used to measure how much
//!   utility a defense costs.
//! - [`adtrans`]: ad hoc translation scoring for cross-lingual attacks.
//! - [`harness`]: corpus loading, experiment sweeps, report emission and the
//!   newline-delimited JSON embedding service.
//! - [`synth`]: a parallel multilingual toy suite (corpora, dictionaries,
//!   retrieval tasks) that the examples and tests run on.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod adtrans;
pub mod defenses;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod inversion;
pub mod metrics;
pub mod retrieval;
pub mod synth;

pub use embedding::{cosine, BlackBoxEmbedder, Embedding, NgramConfig, NgramEmbedder, TextSample};
pub use error::{Error, Result};
