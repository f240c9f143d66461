//! A seeded, parallel multilingual toy suite: a 20-concept lexicon in four
//! languages, sentence corpora, bilingual dictionaries and retrieval tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adtrans::{write_dictionary, DictionaryTranslator};
use crate::embedding::TextSample;
use crate::error::Result;
use crate::harness::corpus::write_jsonl_corpus;
use crate::retrieval::{write_qrels, RetrievalTask};

pub const LANGUAGES: [&str; 4] = ["de", "en", "es", "fr"];

/// One concept per row, columns in [`LANGUAGES`] order.
const LEXICON: [[&str; 4]; 20] = [
    ["haus", "house", "casa", "maison"],
    ["baum", "tree", "arbol", "arbre"],
    ["wasser", "water", "agua", "eau"],
    ["rot", "red", "rojo", "rouge"],
    ["gruen", "green", "verde", "vert"],
    ["hund", "dog", "perro", "chien"],
    ["katze", "cat", "gato", "chat"],
    ["brot", "bread", "pan", "pain"],
    ["stadt", "city", "ciudad", "ville"],
    ["fluss", "river", "rio", "fleuve"],
    ["buch", "book", "libro", "livre"],
    ["nacht", "night", "noche", "nuit"],
    ["sonne", "sun", "sol", "soleil"],
    ["mond", "moon", "luna", "lune"],
    ["alt", "old", "viejo", "vieux"],
    ["klein", "small", "pequeno", "petit"],
    ["gross", "big", "grande", "grand"],
    ["strasse", "road", "camino", "route"],
    ["freund", "friend", "amigo", "ami"],
    ["feuer", "fire", "fuego", "feu"],
];

fn lang_column(lang: &str) -> usize {
    LANGUAGES
        .iter()
        .position(|l| *l == lang)
        .unwrap_or_else(|| panic!("language {lang} is not part of the toy suite"))
}

#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    seed: u64,
    /// Tokens per sentence.
    pub sentence_len: usize,
}

impl SyntheticSuite {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            sentence_len: 4,
        }
    }

    pub fn with_sentence_len(mut self, len: usize) -> Self {
        self.sentence_len = len;
        self
    }

    pub fn languages(&self) -> Vec<String> {
        LANGUAGES.iter().map(|s| s.to_string()).collect()
    }

    /// The 20-word vocabulary of one language, sorted.
    pub fn vocab(&self, lang: &str) -> Vec<String> {
        let col = lang_column(lang);
        let mut v: Vec<String> = LEXICON.iter().map(|row| row[col].to_owned()).collect();
        v.sort();
        v
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// `count` distinct concept sequences, identical for every language.
    pub fn concept_sentences(&self, count: usize) -> Vec<Vec<usize>> {
        let mut rng = self.rng(1);
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let s: Vec<usize> = (0..self.sentence_len)
                .map(|_| rng.random_range(0..LEXICON.len()))
                .collect();
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    }

    pub fn render(&self, concepts: &[usize], lang: &str) -> String {
        let col = lang_column(lang);
        concepts
            .iter()
            .map(|c| LEXICON[*c][col])
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parallel corpus: sample `s{i}` carries the same concepts in every language.
    pub fn corpus(&self, lang: &str, count: usize) -> Vec<TextSample> {
        self.concept_sentences(count)
            .iter()
            .enumerate()
            .map(|(i, c)| TextSample::new(format!("s{i}"), self.render(c, lang), lang))
            .collect()
    }

    pub fn dictionary(&self, src: &str, tgt: &str) -> Vec<(String, String)> {
        let (a, b) = (lang_column(src), lang_column(tgt));
        LEXICON
            .iter()
            .map(|row| (row[a].to_owned(), row[b].to_owned()))
            .collect()
    }

    /// Dictionaries for every ordered language pair.
    pub fn translator(&self) -> DictionaryTranslator {
        let mut t = DictionaryTranslator::new();
        for src in LANGUAGES {
            for tgt in LANGUAGES {
                if src != tgt {
                    t.insert_pair(src, tgt, self.dictionary(src, tgt));
                }
            }
        }
        t
    }

    /// Documents are sentences in `doc_lang`; each query is its document's
    /// sentence with one concept replaced, rendered in `query_lang`, and
    /// judged relevant only to that document.
    pub fn task(&self, query_lang: &str, doc_lang: &str, docs: usize) -> RetrievalTask {
        let sentences = self.concept_sentences(docs);
        let stream = 100 + (lang_column(query_lang) * 4 + lang_column(doc_lang)) as u64;
        let mut rng = self.rng(stream);
        let mut queries = Vec::with_capacity(docs);
        let mut qrels = BTreeMap::new();
        let concept_ids: Vec<usize> = (0..LEXICON.len()).collect();
        for (i, s) in sentences.iter().enumerate() {
            let mut q = s.clone();
            let pos = rng.random_range(0..q.len());
            let others: Vec<usize> = concept_ids
                .iter()
                .copied()
                .filter(|c| *c != s[pos])
                .collect();
            q[pos] = *others
                .choose(&mut rng)
                .expect("lexicon has more than one concept");
            queries.push(TextSample::new(
                format!("q{i}"),
                self.render(&q, query_lang),
                query_lang,
            ));
            qrels.insert((format!("q{i}"), format!("d{i}")), 1);
        }
        let docs = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| TextSample::new(format!("d{i}"), self.render(s, doc_lang), doc_lang))
            .collect();
        RetrievalTask {
            name: format!("{query_lang}-{doc_lang}"),
            queries,
            docs,
            qrels,
        }
    }

    pub fn monolingual_task(&self, lang: &str, docs: usize) -> RetrievalTask {
        self.task(lang, lang, docs)
    }

    /// One monolingual task per language.
    pub fn monolingual_tasks(&self, docs: usize) -> Vec<RetrievalTask> {
        LANGUAGES
            .iter()
            .map(|l| self.monolingual_task(l, docs))
            .collect()
    }

    /// Monolingual tasks plus English queries against each other language.
    pub fn retrieval_suite(&self, docs: usize) -> Vec<RetrievalTask> {
        let mut tasks = self.monolingual_tasks(docs);
        tasks.extend(
            LANGUAGES
                .iter()
                .filter(|l| **l != "en")
                .map(|l| self.task("en", l, docs)),
        );
        tasks
    }

    /// Writes corpora, dictionaries and retrieval tasks under `dir`.
    pub fn write_to(&self, dir: &Path, corpus_size: usize, task_docs: usize) -> Result<SuiteFiles> {
        std::fs::create_dir_all(dir)?;
        let mut files = SuiteFiles::default();
        for lang in LANGUAGES {
            let path = dir.join(format!("corpus.{lang}.jsonl"));
            write_jsonl_corpus(&path, &self.corpus(lang, corpus_size))?;
            files.corpora.insert(lang.to_owned(), path);
        }
        for src in LANGUAGES {
            for tgt in LANGUAGES {
                if src != tgt {
                    let path = dir.join(format!("dict.{src}-{tgt}.tsv"));
                    write_dictionary(&path, &self.dictionary(src, tgt))?;
                    files
                        .dictionaries
                        .push((src.to_owned(), tgt.to_owned(), path));
                }
            }
        }
        for task in self.retrieval_suite(task_docs) {
            let file = |kind: &str| dir.join(format!("task.{}.{kind}", task.name));
            let paths = TaskFiles {
                name: task.name.clone(),
                queries: file("queries.jsonl"),
                docs: file("docs.jsonl"),
                qrels: file("qrels.tsv"),
            };
            write_jsonl_corpus(&paths.queries, &task.queries)?;
            write_jsonl_corpus(&paths.docs, &task.docs)?;
            write_qrels(&paths.qrels, &task.qrels)?;
            files.tasks.push(paths);
        }
        Ok(files)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteFiles {
    pub corpora: BTreeMap<String, PathBuf>,
    pub dictionaries: Vec<(String, String, PathBuf)>,
    pub tasks: Vec<TaskFiles>,
}

#[derive(Debug, Clone)]
pub struct TaskFiles {
    pub name: String,
    pub queries: PathBuf,
    pub docs: PathBuf,
    pub qrels: PathBuf,
}
