//! Black-box inversion: recover text whose embedding is closest in cosine
//! to a leaked target embedding.
//!
//! The attack has three phases. [`base_hypothesis`] builds an initial text
//! greedily, token by token. Each [`correction_step`] then asks a
//! [`MutationGenerator`] for up to `b` continuations of every beam member,
//! embeds the resulting `b * b` pool, and keeps the `b` unique texts closest
//! to the target. [`invert`] drives the loop and keeps a best-so-far
//! hypothesis across every text it has scored.
//!
//! Every embedding goes through the [`BlackBoxEmbedder`]; the attack never
//! looks inside it.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::embedding::{cosine, BlackBoxEmbedder, Embedding};
use crate::error::{Error, Result};

/// Scores at or above this count as a perfect match in embedding space.
pub const CONVERGENCE_THRESHOLD: f64 = 1.0 - 1e-9;

/// Upper bound on the number of candidates [`exhaustive_oracle`] will embed.
pub const ORACLE_LIMIT: u128 = 1_000_000;

/// A candidate reconstruction together with its re-embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    pub embedding: Embedding,
    /// Cosine between `embedding` and the attack target.
    pub score: f64,
    /// Correction step that produced this text; 0 for the base hypothesis.
    pub step: usize,
}

impl Hypothesis {
    pub fn tokens(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }
}

/// Descending score, then ascending text.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.text.cmp(&b.text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Number of correction steps after the base hypothesis.
    pub steps: usize,
    /// Sequence beam width `b`.
    pub beam_width: usize,
    pub max_tokens: usize,
    pub vocab: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<u64>,
}

impl AttackConfig {
    pub fn new(vocab: Vec<String>, steps: usize, beam_width: usize, max_tokens: usize) -> Self {
        Self {
            steps,
            beam_width,
            max_tokens,
            vocab,
            query_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width < 1 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if self.query_budget == Some(0) {
            return Err(Error::Config("query budget must be positive".into()));
        }
        validate_vocab(&self.vocab)
    }
}

fn validate_vocab(vocab: &[String]) -> Result<()> {
    if vocab.is_empty() {
        return Err(Error::Empty("vocabulary"));
    }
    let mut seen = BTreeSet::new();
    for token in vocab {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!(
                "vocabulary token {token:?} must be non-empty without whitespace"
            )));
        }
        if !seen.insert(token.as_str()) {
            return Err(Error::Config(format!(
                "duplicate vocabulary token {token:?}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    BudgetExhausted,
    Converged,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Best hypothesis over everything scored during the run.
    pub best: Hypothesis,
    /// Best-so-far score after the base pass and after each correction step.
    pub beam_history: Vec<f64>,
    pub queries_used: u64,
    pub wall_time: Duration,
    pub terminated: Termination,
}

/// Proposes edited texts for a hypothesis; stands in for a trained corrector.
pub trait MutationGenerator: Sync {
    /// Returns up to `k` candidate texts. Must be deterministic in `(h, k)`.
    fn propose(&self, h: &Hypothesis, k: usize) -> Vec<String>;
}

/// Reference generator: single-token substitutions, insertions, deletions
/// and adjacent swaps, sampled down to `k` with a stream seeded by the
/// generator seed, the hypothesis text and its step.
#[derive(Debug, Clone)]
pub struct EditGenerator {
    vocab: Vec<String>,
    max_tokens: usize,
    seed: u64,
}

impl EditGenerator {
    pub fn new(vocab: Vec<String>, max_tokens: usize, seed: u64) -> Result<Self> {
        validate_vocab(&vocab)?;
        if max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        Ok(Self {
            vocab,
            max_tokens,
            seed,
        })
    }

    pub fn for_attack(config: &AttackConfig, seed: u64) -> Result<Self> {
        Self::new(config.vocab.clone(), config.max_tokens, seed)
    }

    /// Every text one edit away from `tokens`, without duplicates, in a
    /// fixed order. Inputs longer than `max_tokens` are only ever shortened.
    pub fn neighborhood(&self, tokens: &[&str]) -> Vec<String> {
        let mut out = BTreeSet::new();
        let own = tokens.join(" ");
        let mut push = |toks: &[&str]| {
            let text = toks.join(" ");
            if text != own {
                out.insert(text);
            }
        };
        let fits = tokens.len() <= self.max_tokens;
        let mut buf: Vec<&str> = Vec::with_capacity(tokens.len() + 1);
        for i in 0..tokens.len() {
            if fits {
                for v in &self.vocab {
                    if v != tokens[i] {
                        buf.clear();
                        buf.extend_from_slice(tokens);
                        buf[i] = v;
                        push(&buf);
                    }
                }
            }
            buf.clear();
            buf.extend_from_slice(&tokens[..i]);
            buf.extend_from_slice(&tokens[i + 1..]);
            push(&buf);
            if fits && i + 1 < tokens.len() && tokens[i] != tokens[i + 1] {
                buf.clear();
                buf.extend_from_slice(tokens);
                buf.swap(i, i + 1);
                push(&buf);
            }
        }
        if tokens.len() < self.max_tokens {
            for pos in 0..=tokens.len() {
                for v in &self.vocab {
                    buf.clear();
                    buf.extend_from_slice(&tokens[..pos]);
                    buf.push(v);
                    buf.extend_from_slice(&tokens[pos..]);
                    push(&buf);
                }
            }
        }
        out.into_iter().collect()
    }
}

impl MutationGenerator for EditGenerator {
    fn propose(&self, h: &Hypothesis, k: usize) -> Vec<String> {
        let mut candidates = self.neighborhood(&h.tokens());
        if candidates.len() <= k {
            return candidates;
        }
        let key = XxHash64::oneshot(
            self.seed ^ (h.step as u64).rotate_left(32),
            h.text.as_bytes(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let (chosen, _) = candidates.partial_shuffle(&mut rng, k);
        chosen.to_vec()
    }
}

/// Embeds texts against one target, enforcing the query budget and
/// remembering the best hypothesis seen.
struct Scorer<'a, E: ?Sized> {
    embedder: &'a E,
    target: &'a Embedding,
    budget: Option<u64>,
    used: u64,
    best: Option<Hypothesis>,
}

impl<'a, E: BlackBoxEmbedder + ?Sized> Scorer<'a, E> {
    fn new(embedder: &'a E, target: &'a Embedding, budget: Option<u64>) -> Result<Self> {
        target.check_dim(embedder.dimension())?;
        Ok(Self {
            embedder,
            target,
            budget,
            used: 0,
            best: None,
        })
    }

    /// Scores as many texts as the budget allows, in the order given. The
    /// flag reports whether the budget cut the batch short.
    fn score(&mut self, mut texts: Vec<String>, step: usize) -> Result<(Vec<Hypothesis>, bool)> {
        let mut exhausted = false;
        if let Some(budget) = self.budget {
            let remaining = budget.saturating_sub(self.used) as usize;
            if texts.len() > remaining {
                texts.truncate(remaining);
                exhausted = true;
            }
        }
        if texts.is_empty() {
            return Ok((Vec::new(), exhausted));
        }
        let embeddings = self.embedder.embed_batch(&texts)?;
        self.used += texts.len() as u64;
        let mut out = Vec::with_capacity(texts.len());
        for (text, embedding) in texts.into_iter().zip(embeddings) {
            embedding.check_dim(self.target.dim())?;
            let score = cosine(&embedding, self.target)?;
            let h = Hypothesis {
                text,
                embedding,
                score,
                step,
            };
            if self
                .best
                .as_ref()
                .is_none_or(|b| rank(&h, b) == Ordering::Less)
            {
                self.best = Some(h.clone());
            }
            out.push(h);
        }
        Ok((out, exhausted))
    }

    fn best_score(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |h| h.score)
    }
}

fn best_of(hyps: Vec<Hypothesis>) -> Option<Hypothesis> {
    hyps.into_iter().min_by(rank)
}

/// Returns the base hypothesis, or `None` if the budget ran out before any
/// text was scored, plus the exhaustion flag.
fn base_inner<E: BlackBoxEmbedder + ?Sized>(
    scorer: &mut Scorer<'_, E>,
    config: &AttackConfig,
) -> Result<(Option<Hypothesis>, bool)> {
    let mut current: Option<Hypothesis> = None;
    let mut prefix = String::new();
    for position in 0..config.max_tokens {
        let candidates = config
            .vocab
            .iter()
            .map(|t| {
                if prefix.is_empty() {
                    t.clone()
                } else {
                    format!("{prefix} {t}")
                }
            })
            .collect();
        let (scored, exhausted) = scorer.score(candidates, 0)?;
        let Some(top) = best_of(scored) else {
            return Ok((current, exhausted));
        };
        let improves = current.as_ref().is_none_or(|c| top.score > c.score);
        // The first token is always taken so the base text is never empty.
        if position == 0 || improves {
            prefix.clone_from(&top.text);
            current = Some(top);
        } else {
            return Ok((current, exhausted));
        }
        if exhausted {
            return Ok((current, true));
        }
    }
    Ok((current, false))
}

/// Greedy token-by-token construction of the initial hypothesis.
///
/// At each position the vocabulary token whose appended text scores highest
/// is kept; construction stops at `max_tokens` or when no token improves the
/// score. If the query budget runs out, the partial hypothesis is returned.
pub fn base_hypothesis<E: BlackBoxEmbedder + ?Sized>(
    target: &Embedding,
    embedder: &E,
    config: &AttackConfig,
) -> Result<Hypothesis> {
    config.validate()?;
    let mut scorer = Scorer::new(embedder, target, config.query_budget)?;
    base_inner(&mut scorer, config)?
        .0
        .ok_or_else(|| Error::Config("query budget too small to score any text".into()))
}

fn correction_inner<E: BlackBoxEmbedder + ?Sized, G: MutationGenerator + ?Sized>(
    scorer: &mut Scorer<'_, E>,
    beam: &[Hypothesis],
    gen: &G,
    b: usize,
) -> Result<(Vec<Hypothesis>, bool)> {
    let pool: BTreeSet<String> = beam.iter().flat_map(|h| gen.propose(h, b)).collect();
    if pool.is_empty() {
        return Ok((beam.to_vec(), false));
    }
    let step = beam.iter().map(|h| h.step).max().unwrap_or(0) + 1;
    let (mut scored, exhausted) = scorer.score(pool.into_iter().collect(), step)?;
    if scored.is_empty() {
        return Ok((beam.to_vec(), exhausted));
    }
    scored.sort_by(rank);
    scored.truncate(b);
    Ok((scored, exhausted))
}

/// One sequence-level beam search step.
///
/// Each beam member contributes up to `b` proposals; the pooled texts are
/// de-duplicated, embedded and ranked by cosine to `target` (ties broken by
/// text), and the top `b` form the next beam. If nothing is proposed the
/// input beam is returned unchanged.
pub fn correction_step<E: BlackBoxEmbedder + ?Sized, G: MutationGenerator + ?Sized>(
    beam: &[Hypothesis],
    target: &Embedding,
    gen: &G,
    embedder: &E,
    b: usize,
) -> Result<Vec<Hypothesis>> {
    if beam.is_empty() {
        return Err(Error::Empty("beam"));
    }
    if b < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let mut scorer = Scorer::new(embedder, target, None)?;
    Ok(correction_inner(&mut scorer, beam, gen, b)?.0)
}

/// Runs the full attack: base hypothesis, then up to `config.steps`
/// correction steps.
///
/// Stops early once the best score reaches [`CONVERGENCE_THRESHOLD`], or
/// when the query budget runs out (possibly in the middle of a step).
pub fn invert<E: BlackBoxEmbedder + ?Sized, G: MutationGenerator + ?Sized>(
    target: &Embedding,
    embedder: &E,
    gen: &G,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let start = Instant::now();
    config.validate()?;
    let mut scorer = Scorer::new(embedder, target, config.query_budget)?;
    let mut history = Vec::with_capacity(config.steps + 1);

    let (base, mut exhausted) = base_inner(&mut scorer, config)?;
    history.push(scorer.best_score());
    let mut beam: Vec<Hypothesis> = base.into_iter().collect();
    let mut terminated = Termination::Completed;

    if exhausted {
        terminated = Termination::BudgetExhausted;
    } else if scorer.best_score() >= CONVERGENCE_THRESHOLD {
        terminated = Termination::Converged;
    } else {
        for _ in 0..config.steps {
            let (next, hit_budget) = correction_inner(&mut scorer, &beam, gen, config.beam_width)?;
            exhausted = hit_budget;
            history.push(scorer.best_score());
            beam = next;
            if exhausted {
                terminated = Termination::BudgetExhausted;
                break;
            }
            if scorer.best_score() >= CONVERGENCE_THRESHOLD {
                terminated = Termination::Converged;
                break;
            }
        }
    }

    let best = scorer
        .best
        .take()
        .ok_or_else(|| Error::Config("query budget too small to score any text".into()))?;
    Ok(AttackResult {
        best,
        beam_history: history,
        queries_used: scorer.used,
        wall_time: start.elapsed(),
        terminated,
    })
}

/// Number of token sequences of length 0..=max_len over `vocab_size` tokens.
pub fn enumeration_size(vocab_size: usize, max_len: usize) -> u128 {
    let v = vocab_size as u128;
    let mut total: u128 = 0;
    let mut layer: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(v);
    }
    total
}

/// Every token sequence of length 0..=max_len, shortest first, in
/// vocabulary order within a length.
pub fn enumerate_texts(vocab: &[String], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut layer: Vec<String> = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(layer.len() * vocab.len());
        for prefix in &layer {
            for v in vocab {
                next.push(if prefix.is_empty() {
                    v.clone()
                } else {
                    format!("{prefix} {v}")
                });
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Global cosine maximizer over all sequences up to `max_len` tokens,
/// found by brute force. Refuses search spaces above [`ORACLE_LIMIT`].
pub fn exhaustive_oracle<E: BlackBoxEmbedder + ?Sized>(
    target: &Embedding,
    embedder: &E,
    vocab: &[String],
    max_len: usize,
) -> Result<Hypothesis> {
    validate_vocab(vocab)?;
    let candidates = enumeration_size(vocab.len(), max_len);
    if candidates > ORACLE_LIMIT {
        return Err(Error::SearchTooLarge {
            candidates,
            limit: ORACLE_LIMIT,
        });
    }
    let mut scorer = Scorer::new(embedder, target, None)?;
    let (scored, _) = scorer.score(enumerate_texts(vocab, max_len), 0)?;
    best_of(scored).ok_or(Error::Empty("candidate set"))
}
