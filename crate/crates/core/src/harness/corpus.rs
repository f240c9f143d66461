//! JSONL corpora of `{"id", "text", "lang"}` records.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::embedding::TextSample;
use crate::error::{Error, Result};

/// Text samples in file order, with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub samples: Vec<TextSample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn languages(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.lang.as_str()).collect()
    }

    /// Sorted distinct whitespace tokens of every sample.
    pub fn vocab(&self) -> Vec<String> {
        corpus_vocab(&self.samples)
    }

    /// The first `n` samples.
    pub fn test_split(&self, n: usize) -> &[TextSample] {
        &self.samples[..n.min(self.samples.len())]
    }
}

pub fn corpus_vocab(samples: &[TextSample]) -> Vec<String> {
    samples
        .iter()
        .flat_map(|s| s.text.split_whitespace())
        .map(str::to_owned)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Reads one sample per non-blank line, rejecting duplicate ids. Errors
/// carry the 1-based line number.
pub fn load_jsonl_corpus(path: &Path) -> Result<Corpus> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let sample: TextSample =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !ids.insert(sample.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", sample.id)));
        }
        samples.push(sample);
    }
    Ok(Corpus { samples })
}

pub fn write_jsonl_corpus(path: &Path, samples: &[TextSample]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
