//! Ad hoc translation (AdTrans) scoring for cross-lingual inversion, and
//! round-trip translation.
//!
//! A reconstruction produced by an attack that only speaks the source
//! language is translated into the target language before being compared
//! with the true text, so that leakage hidden behind a language change still
//! shows up in string metrics.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::embedding::{cosine, BlackBoxEmbedder};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String>;
}

/// Returns every text unchanged, for any language pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _src: &str, _tgt: &str) -> Result<String> {
        Ok(text.to_owned())
    }
}

/// Word-for-word translation from per-pair dictionaries. Words missing from
/// a dictionary pass through unchanged; output is single-space joined.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTranslator {
    pairs: BTreeMap<(String, String), HashMap<String, String>>,
}

impl DictionaryTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_pair<I, A, B>(&mut self, src: &str, tgt: &str, entries: I)
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let map = self
            .pairs
            .entry((src.to_owned(), tgt.to_owned()))
            .or_default();
        map.extend(entries.into_iter().map(|(a, b)| (a.into(), b.into())));
    }

    /// Adds `src -> tgt` and its inverse `tgt -> src`.
    pub fn insert_bidirectional<I, A, B>(&mut self, src: &str, tgt: &str, entries: I)
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let entries: Vec<(String, String)> = entries
            .into_iter()
            .map(|(a, b)| (a.into(), b.into()))
            .collect();
        self.insert_pair(src, tgt, entries.iter().cloned());
        self.insert_pair(tgt, src, entries.into_iter().map(|(a, b)| (b, a)));
    }

    /// Loads `src_word<TAB>tgt_word` lines for one direction.
    pub fn load_tsv(&mut self, path: &Path, src: &str, tgt: &str) -> Result<()> {
        self.insert_pair(src, tgt, read_dictionary(path)?);
        Ok(())
    }

    pub fn supports(&self, src: &str, tgt: &str) -> bool {
        src == tgt || self.pairs.contains_key(&(src.to_owned(), tgt.to_owned()))
    }

    pub fn is_bijective(&self, src: &str, tgt: &str) -> bool {
        let key = (src.to_owned(), tgt.to_owned());
        let Some(map) = self.pairs.get(&key) else {
            return false;
        };
        let mut targets: Vec<&String> = map.values().collect();
        targets.sort();
        targets.dedup();
        targets.len() == map.len()
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String> {
        if src == tgt {
            return Ok(text.split_whitespace().collect::<Vec<_>>().join(" "));
        }
        let map = self
            .pairs
            .get(&(src.to_owned(), tgt.to_owned()))
            .ok_or_else(|| Error::UnsupportedPair {
                src: src.to_owned(),
                tgt: tgt.to_owned(),
            })?;
        Ok(text
            .split_whitespace()
            .map(|w| map.get(w).map_or(w, String::as_str))
            .collect::<Vec<_>>()
            .join(" "))
    }
}

/// Parses a `src_word<TAB>tgt_word` dictionary file.
pub fn read_dictionary(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((a, b)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: "expected `src_word<TAB>tgt_word`".into(),
            });
        };
        out.push((a.trim().to_owned(), b.trim().to_owned()));
    }
    Ok(out)
}

pub fn write_dictionary(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let body: String = entries.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
    std::fs::write(path, body)?;
    Ok(())
}

/// Metrics before and after ad hoc translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdTransOutcome {
    pub pre: MetricReport,
    pub post: MetricReport,
    /// Relative BLEU growth in percent; `None` when the pre-translation
    /// BLEU is 0.
    pub gain_pct: Option<f64>,
}

/// `100 * (post - pre) / pre`, undefined for `pre <= 0`.
pub fn gain_pct(pre_bleu: f64, post_bleu: f64) -> Option<f64> {
    (pre_bleu > 0.0).then(|| 100.0 * (post_bleu - pre_bleu) / pre_bleu)
}

/// Scores `generated` against `target_text` as is, and again after
/// translating it from `src` into `tgt`.
pub fn adtrans_eval<T: Translator + ?Sized, E: BlackBoxEmbedder + ?Sized>(
    generated: &str,
    src: &str,
    target_text: &str,
    tgt: &str,
    translator: &T,
    embedder: &E,
) -> Result<AdTransOutcome> {
    let translated = translator.translate(generated, src, tgt)?;
    let batch = vec![
        generated.to_owned(),
        translated.clone(),
        target_text.to_owned(),
    ];
    let embedded = embedder.embed_batch(&batch)?;
    let pre = MetricReport::for_pair(generated, target_text, cosine(&embedded[0], &embedded[2])?);
    let post = MetricReport::for_pair(
        &translated,
        target_text,
        cosine(&embedded[1], &embedded[2])?,
    );
    Ok(AdTransOutcome {
        pre,
        post,
        gain_pct: gain_pct(pre.bleu, post.bleu),
    })
}

/// `src -> pivot -> src`.
pub fn round_trip<T: Translator + ?Sized>(
    text: &str,
    src: &str,
    pivot: &str,
    translator: &T,
) -> Result<String> {
    let there = translator.translate(text, src, pivot)?;
    translator.translate(&there, pivot, src)
}
