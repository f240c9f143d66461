//! Brute-force dense retrieval for measuring what a defense costs in
//! utility. Monolingual and cross-lingual tasks share one code path.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::defenses::{apply_defense_stack, group_means, DefenseConfig, DefenseContext};
use crate::embedding::{cosine_slices, BlackBoxEmbedder, Embedding, TextSample};
use crate::error::{Error, Result};
use crate::harness::corpus::load_jsonl_corpus;
use crate::metrics::ndcg_at_k;

/// Queries, documents and graded relevance judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTask {
    pub name: String,
    pub queries: Vec<TextSample>,
    pub docs: Vec<TextSample>,
    /// (query id, doc id) -> grade >= 1.
    pub qrels: BTreeMap<(String, String), u32>,
}

impl RetrievalTask {
    pub fn validate(&self) -> Result<()> {
        let mut doc_ids = BTreeSet::new();
        for d in &self.docs {
            if !doc_ids.insert(d.id.as_str()) {
                return Err(Error::Config(format!(
                    "task {}: duplicate doc id {}",
                    self.name, d.id
                )));
            }
        }
        let mut query_ids = BTreeSet::new();
        for q in &self.queries {
            if !query_ids.insert(q.id.as_str()) {
                return Err(Error::Config(format!(
                    "task {}: duplicate query id {}",
                    self.name, q.id
                )));
            }
        }
        for ((q, d), grade) in &self.qrels {
            if !query_ids.contains(q.as_str()) || !doc_ids.contains(d.as_str()) {
                return Err(Error::Config(format!(
                    "task {}: qrel ({q}, {d}) references an unknown id",
                    self.name
                )));
            }
            if *grade < 1 {
                return Err(Error::Config(format!(
                    "task {}: qrel ({q}, {d}) has grade 0",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn query_languages(&self) -> BTreeSet<&str> {
        self.queries.iter().map(|q| q.lang.as_str()).collect()
    }

    pub fn doc_languages(&self) -> BTreeSet<&str> {
        self.docs.iter().map(|d| d.lang.as_str()).collect()
    }

    pub fn is_monolingual(&self) -> bool {
        self.query_languages() == self.doc_languages()
    }

    /// Relevance judgments for one query, keyed by doc id.
    pub fn judgments(&self, query_id: &str) -> HashMap<String, u32> {
        self.qrels
            .iter()
            .filter(|((q, _), _)| q == query_id)
            .map(|((_, d), g)| (d.clone(), *g))
            .collect()
    }

    /// Loads a task from JSONL query and doc files plus a qrels TSV.
    pub fn load(name: &str, queries: &Path, docs: &Path, qrels: &Path) -> Result<Self> {
        let task = Self {
            name: name.to_owned(),
            queries: load_jsonl_corpus(queries)?.samples,
            docs: load_jsonl_corpus(docs)?.samples,
            qrels: load_qrels(qrels)?,
        };
        task.validate()?;
        Ok(task)
    }
}

/// Reads `query_id<TAB>doc_id<TAB>grade` lines. Blank lines are skipped.
pub fn load_qrels(path: &Path) -> Result<BTreeMap<(String, String), u32>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [q, d, g] = fields[..] else {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        };
        let grade: u32 = g
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad grade {g:?}: {e}")))?;
        out.insert((q.to_owned(), d.to_owned()), grade);
    }
    Ok(out)
}

pub fn write_qrels(path: &Path, qrels: &BTreeMap<(String, String), u32>) -> Result<()> {
    let body: String = qrels
        .iter()
        .map(|((q, d), g)| format!("{q}\t{d}\t{g}\n"))
        .collect();
    std::fs::write(path, body)?;
    Ok(())
}

/// Defended document vectors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    ids: Vec<String>,
    vectors: Vec<Embedding>,
}

impl Index {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Embedding] {
        &self.vectors
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|p| &self.vectors[p])
    }
}

/// Which language id masks a query in cross-lingual tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskIdSource {
    /// Every embedding is masked with its own language id.
    #[default]
    Own,
    /// Queries are masked with the document language id.
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOptions {
    pub k: usize,
    pub mask_source: MaskIdSource,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            k: 10,
            mask_source: MaskIdSource::Own,
        }
    }
}

fn embed_samples<E: BlackBoxEmbedder + ?Sized>(
    samples: &[TextSample],
    embedder: &E,
) -> Result<Vec<Embedding>> {
    let texts: Vec<String> = samples.iter().map(|s| s.text.clone()).collect();
    let raw = embedder.embed_batch(&texts)?;
    Ok(raw
        .into_iter()
        .zip(samples)
        .map(|(e, s)| e.with_lang(s.lang.clone()))
        .collect())
}

fn defend_all(
    samples: &[TextSample],
    raw: &[Embedding],
    defense: &DefenseConfig,
    means: Option<&BTreeMap<String, Embedding>>,
    key_prefix: &str,
    mask_lang: Option<&str>,
) -> Result<Vec<Embedding>> {
    samples
        .iter()
        .zip(raw)
        .map(|(s, e)| {
            let key = format!("{key_prefix}{}", s.id);
            let ctx = DefenseContext {
                sample_id: &key,
                group_means: means,
                mask_lang,
            };
            apply_defense_stack(e, defense, &ctx)
        })
        .collect()
}

fn index_from(docs: &[TextSample], vectors: Vec<Embedding>) -> Index {
    Index {
        ids: docs.iter().map(|d| d.id.clone()).collect(),
        vectors,
    }
}

/// Embeds and defends every document. Language means for the
/// language-agnostic stage come from the documents themselves.
pub fn build_index<E: BlackBoxEmbedder + ?Sized>(
    docs: &[TextSample],
    embedder: &E,
    defense: &DefenseConfig,
) -> Result<Index> {
    if docs.is_empty() {
        return Err(Error::Empty("document set"));
    }
    let raw = embed_samples(docs, embedder)?;
    let means = if defense.language_agnostic {
        Some(group_means(&raw)?)
    } else {
        None
    };
    let vectors = defend_all(docs, &raw, defense, means.as_ref(), "doc:", None)?;
    Ok(index_from(docs, vectors))
}

/// Exact top-k by cosine: descending score, ties by ascending id.
pub fn search(index: &Index, query: &Embedding, k: usize) -> Result<Vec<(String, f64)>> {
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut scored = Vec::with_capacity(index.len());
    for (id, v) in index.ids.iter().zip(&index.vectors) {
        query.check_dim(v.dim())?;
        scored.push((id.as_str(), cosine_slices(query.values(), v.values())));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(id, s)| (id.to_owned(), s))
        .collect())
}

/// Mean NDCG@10 over the task's queries.
pub fn evaluate_task<E: BlackBoxEmbedder + ?Sized>(
    task: &RetrievalTask,
    embedder: &E,
    defense: &DefenseConfig,
) -> Result<f64> {
    evaluate_task_with(task, embedder, defense, &RetrievalOptions::default())
}

/// Mean NDCG@k over the task's queries. Queries and documents pass through
/// the same defense stack; language means cover both sides of the task.
/// Queries without judgments score 0.
pub fn evaluate_task_with<E: BlackBoxEmbedder + ?Sized>(
    task: &RetrievalTask,
    embedder: &E,
    defense: &DefenseConfig,
    options: &RetrievalOptions,
) -> Result<f64> {
    task.validate()?;
    if task.docs.is_empty() {
        return Err(Error::Empty("document set"));
    }
    if task.queries.is_empty() {
        return Err(Error::Empty("query set"));
    }
    let raw_docs = embed_samples(&task.docs, embedder)?;
    let raw_queries = embed_samples(&task.queries, embedder)?;
    let means = if defense.language_agnostic {
        let all: Vec<Embedding> = raw_docs.iter().chain(&raw_queries).cloned().collect();
        Some(group_means(&all)?)
    } else {
        None
    };
    let doc_lang = match options.mask_source {
        MaskIdSource::Own => None,
        MaskIdSource::Document => {
            let langs = task.doc_languages();
            if langs.len() != 1 {
                return Err(Error::Config(format!(
                    "task {}: document-language masking needs a single doc language",
                    task.name
                )));
            }
            langs.into_iter().next()
        }
    };
    let docs = defend_all(&task.docs, &raw_docs, defense, means.as_ref(), "doc:", None)?;
    let queries = defend_all(
        &task.queries,
        &raw_queries,
        defense,
        means.as_ref(),
        "query:",
        doc_lang,
    )?;
    let index = index_from(&task.docs, docs);

    let mut total = 0.0;
    for (q, v) in task.queries.iter().zip(&queries) {
        let judged = task.judgments(&q.id);
        if judged.is_empty() {
            log::warn!(
                "task {}: query {} has no relevance judgments; scoring 0",
                task.name,
                q.id
            );
            continue;
        }
        let ranking: Vec<String> = search(&index, v, options.k)?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        total += ndcg_at_k(&ranking, &judged, options.k);
    }
    Ok(total / task.queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defenses::{mask_language, MaskingConfig};
    use crate::embedding::{cosine, NgramConfig, NgramEmbedder};
    use proptest::prelude::*;

    fn embedder() -> NgramEmbedder {
        NgramEmbedder::new(NgramConfig::default()).unwrap()
    }

    fn samples(prefix: &str, texts: &[&str], lang: &str) -> Vec<TextSample> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| TextSample::new(format!("{prefix}{i}"), *t, lang))
            .collect()
    }

    fn raw_index(vectors: Vec<Vec<f64>>) -> Index {
        Index {
            ids: (0..vectors.len()).map(|i| format!("d{i:03}")).collect(),
            vectors: vectors
                .into_iter()
                .map(|v| Embedding::new(v, None).unwrap())
                .collect(),
        }
    }

    #[test]
    fn index_basics() {
        let e = embedder();
        let docs = samples("d", &["red apple"], "en");
        let idx = build_index(&docs, &e, &DefenseConfig::none()).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(
            idx.vectors()[0].values(),
            e.embed("red apple").unwrap().values()
        );
        let docs = samples("d", &["red apple", "green pear", "blue sky"], "en");
        let noisy = DefenseConfig::noise(0.1, 5);
        assert_eq!(
            build_index(&docs, &e, &noisy).unwrap(),
            build_index(&docs, &e, &noisy).unwrap()
        );
        assert!(build_index(&[], &e, &noisy).is_err());
    }

    #[test]
    fn search_contract() {
        let e = embedder();
        let docs = samples("d", &["red apple", "green pear", "blue sky"], "en");
        let idx = build_index(&docs, &e, &DefenseConfig::none()).unwrap();
        let hits = search(&idx, idx.get("d1").unwrap(), 1).unwrap();
        assert_eq!(hits[0].0, "d1");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(search(&idx, idx.get("d1").unwrap(), 50).unwrap().len(), 3);
        assert!(search(&idx, &Embedding::zeros(3).unwrap(), 5).is_err());
        assert!(search(&idx, idx.get("d1").unwrap(), 0).is_err());

        let tied = raw_index(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let hits = search(&tied, &Embedding::new(vec![1.0, 0.0], None).unwrap(), 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.0.as_str()).collect();
        assert_eq!(ids, ["d000", "d001", "d002"]);
    }

    fn self_task(e: &NgramEmbedder) -> RetrievalTask {
        let docs = samples(
            "d",
            &[
                "red apple pie",
                "green pear tart",
                "blue sky blue",
                "old stone house",
            ],
            "en",
        );
        let queries = samples("q", &["red apple", "pear tart", "sky", "stone"], "en");
        // Judge each query's nearest document as its only relevant one.
        let idx = build_index(&docs, e, &DefenseConfig::none()).unwrap();
        let mut qrels = BTreeMap::new();
        for q in &queries {
            let top = search(&idx, &e.embed(&q.text).unwrap(), 1).unwrap();
            qrels.insert((q.id.clone(), top[0].0.clone()), 1);
        }
        RetrievalTask {
            name: "self".into(),
            queries,
            docs,
            qrels,
        }
    }

    #[test]
    fn evaluate_self_consistent_task() {
        let e = embedder();
        let task = self_task(&e);
        assert!(task.is_monolingual());
        assert_eq!(
            evaluate_task(&task, &e, &DefenseConfig::none()).unwrap(),
            1.0
        );
    }

    #[test]
    fn evaluate_single_doc_corpus() {
        let e = embedder();
        let docs = samples("d", &["only doc"], "en");
        let queries = samples("q", &["a", "b", "c"], "en");
        let qrels = queries
            .iter()
            .map(|q| ((q.id.clone(), "d0".to_owned()), 1))
            .collect();
        let task = RetrievalTask {
            name: "one".into(),
            queries,
            docs,
            qrels,
        };
        assert_eq!(
            evaluate_task(&task, &e, &DefenseConfig::none()).unwrap(),
            1.0
        );
    }

    #[test]
    fn unjudged_query_scores_zero() {
        let e = embedder();
        let mut task = self_task(&e);
        let dropped = task.qrels.keys().next().unwrap().clone();
        task.qrels.remove(&dropped);
        assert!((evaluate_task(&task, &e, &DefenseConfig::none()).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn invalid_qrels_rejected() {
        let e = embedder();
        let mut task = self_task(&e);
        task.qrels.insert(("q0".into(), "missing".into()), 1);
        assert!(evaluate_task(&task, &e, &DefenseConfig::none()).is_err());
    }

    #[test]
    fn heavy_noise_hurts_retrieval() {
        let e = NgramEmbedder::new(NgramConfig {
            dim: 16,
            ..NgramConfig::default()
        })
        .unwrap();
        let task = crate::synth::SyntheticSuite::new(17).monolingual_task("en", 40);
        let clean = evaluate_task(&task, &e, &DefenseConfig::none()).unwrap();
        let noisy = evaluate_task(&task, &e, &DefenseConfig::noise(10.0, 3)).unwrap();
        assert!(noisy < clean, "noisy {noisy} clean {clean}");
    }

    #[test]
    fn document_mask_source() {
        let e = embedder();
        let docs = samples("d", &["haus rot", "baum"], "de");
        let queries = samples("q", &["house red"], "en");
        let qrels = [(("q0".to_owned(), "d0".to_owned()), 1)]
            .into_iter()
            .collect();
        let task = RetrievalTask {
            name: "x".into(),
            queries,
            docs,
            qrels,
        };
        assert!(!task.is_monolingual());
        let defense = DefenseConfig::masking(MaskingConfig::for_languages(&["de", "en"]).unwrap());
        let opts = RetrievalOptions {
            mask_source: MaskIdSource::Document,
            ..Default::default()
        };
        let v = evaluate_task_with(&task, &e, &defense, &opts).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn qrels_tsv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.tsv");
        let qrels: BTreeMap<_, _> = [
            (("q1".to_owned(), "d2".to_owned()), 2),
            (("q1".into(), "d3".into()), 1),
        ]
        .into_iter()
        .collect();
        write_qrels(&path, &qrels).unwrap();
        assert_eq!(load_qrels(&path).unwrap(), qrels);
        std::fs::write(&path, "q1\td1\t1\nq2\td2\n").unwrap();
        assert!(matches!(
            load_qrels(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn unit_with_small_head(rest: Vec<f64>, head: f64) -> Vec<f64> {
        let rest_norm = rest.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = (1.0 - head * head).sqrt() / rest_norm;
        std::iter::once(head)
            .chain(rest.into_iter().map(|x| x * scale))
            .collect()
    }

    proptest! {
        #[test]
        fn search_matches_naive_scan(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..30),
            q in prop::collection::vec(-1.0f64..1.0, 6),
            k in 1usize..40,
        ) {
            let idx = raw_index(rows.clone());
            let query = Embedding::new(q, None).unwrap();
            let got = search(&idx, &query, k).unwrap();
            // Naive: score everything, then repeatedly pull the best remaining.
            let mut remaining: Vec<(String, f64)> = rows.iter().enumerate()
                .map(|(i, r)| (format!("d{i:03}"), cosine(&query, &Embedding::new(r.clone(), None).unwrap()).unwrap()))
                .collect();
            let mut expected = Vec::new();
            while !remaining.is_empty() && expected.len() < k {
                let mut best = 0;
                for i in 1..remaining.len() {
                    let (a, b) = (&remaining[i], &remaining[best]);
                    if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                        best = i;
                    }
                }
                expected.push(remaining.remove(best));
            }
            prop_assert_eq!(got, expected);
        }

        /// Small shared ids keep the top-1 neighbor when the margin exceeds
        /// 2|id| + id^2 and dimension-0 components are no larger than the id.
        #[test]
        fn small_mask_preserves_top1(
            rows in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 15), -1.0f64..1.0), 2..12),
            q in (prop::collection::vec(-1.0f64..1.0, 15), -1.0f64..1.0),
            id in 0.001f64..=0.05,
        ) {
            prop_assume!(rows.iter().all(|(r, _)| r.iter().any(|x| x.abs() > 1e-3)));
            prop_assume!(q.0.iter().any(|x| x.abs() > 1e-3));
            let docs: Vec<Vec<f64>> = rows.iter().map(|(r, h)| unit_with_small_head(r.clone(), h * id)).collect();
            let query = Embedding::new(unit_with_small_head(q.0.clone(), q.1 * id), None).unwrap();
            let idx = raw_index(docs.clone());
            let plain = search(&idx, &query, 2).unwrap();
            prop_assume!(plain[0].1 - plain[1].1 > 2.0 * id + id * id);
            let masked_idx = Index {
                ids: idx.ids.clone(),
                vectors: idx.vectors.iter().map(|v| mask_language(v, id).unwrap()).collect(),
            };
            let masked = search(&masked_idx, &mask_language(&query, id).unwrap(), 1).unwrap();
            prop_assert_eq!(&masked[0].0, &plain[0].0);
        }
    }
}
