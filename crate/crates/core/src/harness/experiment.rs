//! Experiment sweeps: reconstruction, cross-lingual reconstruction with
//! ad hoc translation, and the defense trade-off sweep.
//!
//! In every experiment the attacker queries the undefended embedder, the
//! way a trained inverter was fit to clean embeddings, while the leaked
//! target vectors pass through the defense under test.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::adtrans::{adtrans_eval, DictionaryTranslator};
use crate::defenses::{
    apply_defense_stack, group_means, DefenseConfig, DefenseContext, MaskingConfig,
};
use crate::embedding::{cosine, BlackBoxEmbedder, Embedding, NgramEmbedder, TextSample};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::corpus::{corpus_vocab, load_jsonl_corpus, Corpus};
use crate::harness::eaas::RemoteEmbedder;
use crate::harness::report::{ExperimentReport, ExperimentRow, POST_SUFFIX, PRE_SUFFIX};
use crate::inversion::{invert, AttackConfig, AttackResult, EditGenerator};
use crate::metrics::{aggregate, MetricReport};
use crate::retrieval::{evaluate_task, RetrievalTask};

/// Loaded corpora, dictionaries, retrieval tasks and the embedder, local
/// or remote, that every experiment shares.
pub struct Lab {
    config: ExperimentConfig,
    corpora: BTreeMap<String, Corpus>,
    embedder: Box<dyn BlackBoxEmbedder>,
    translator: DictionaryTranslator,
    tasks: Vec<RetrievalTask>,
}

/// One attacked sample.
struct Attacked<'a> {
    sample: &'a TextSample,
    raw_target: Embedding,
    result: AttackResult,
}

impl Lab {
    /// Builds the lab, connecting to `config.eaas` when set.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let embedder: Box<dyn BlackBoxEmbedder> = match &config.eaas {
            Some(addr) => Box::new(RemoteEmbedder::connect(addr.as_str(), config.embedder.dim)?),
            None => Box::new(NgramEmbedder::new(config.embedder)?),
        };
        Self::with_embedder(config, embedder)
    }

    pub fn with_embedder(
        config: ExperimentConfig,
        embedder: Box<dyn BlackBoxEmbedder>,
    ) -> Result<Self> {
        config.validate()?;
        let mut corpora = BTreeMap::new();
        for (lang, path) in &config.corpora {
            let corpus = load_jsonl_corpus(path)?;
            if let Some(other) = corpus.languages().into_iter().find(|l| l != lang) {
                return Err(Error::Config(format!(
                    "corpus {} for `{lang}` contains a sample tagged `{other}`",
                    path.display()
                )));
            }
            corpora.insert(lang.clone(), corpus);
        }
        let mut translator = DictionaryTranslator::new();
        for d in &config.dictionaries {
            translator.load_tsv(&d.path, &d.src, &d.tgt)?;
        }
        let tasks = config
            .retrieval_tasks
            .iter()
            .map(|t| RetrievalTask::load(&t.name, &t.queries, &t.docs, &t.qrels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            corpora,
            embedder,
            translator,
            tasks,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn embedder(&self) -> &dyn BlackBoxEmbedder {
        self.embedder.as_ref()
    }

    pub fn languages(&self) -> Vec<String> {
        self.corpora.keys().cloned().collect()
    }

    pub fn tasks(&self) -> &[RetrievalTask] {
        &self.tasks
    }

    fn corpus(&self, lang: &str) -> Result<&Corpus> {
        self.corpora
            .get(lang)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_owned()))
    }

    fn test_split(&self, lang: &str) -> Result<&[TextSample]> {
        Ok(self.corpus(lang)?.test_split(self.config.test_samples))
    }

    fn pooled_vocab(&self) -> Vec<String> {
        let all: Vec<TextSample> = self
            .corpora
            .values()
            .flat_map(|c| c.samples.iter().cloned())
            .collect();
        corpus_vocab(&all)
    }

    fn embed_targets(&self, samples: &[TextSample]) -> Result<Vec<Embedding>> {
        let texts: Vec<String> = samples.iter().map(|s| s.text.clone()).collect();
        Ok(self
            .embedder
            .embed_batch(&texts)?
            .into_iter()
            .zip(samples)
            .map(|(e, s)| e.with_lang(s.lang.clone()))
            .collect())
    }

    fn attack_config(&self, vocab: Vec<String>, steps: usize, beam: usize) -> AttackConfig {
        AttackConfig {
            steps,
            beam_width: beam,
            max_tokens: self.config.attack.max_tokens,
            vocab,
            query_budget: self.config.attack.query_budget,
        }
    }

    /// Attacks every sample's defended embedding with one attack config.
    fn attack_all<'a>(
        &self,
        samples: &'a [TextSample],
        raw_targets: &[Embedding],
        attack: &AttackConfig,
        defense: &DefenseConfig,
    ) -> Result<Vec<Attacked<'a>>> {
        let gen = EditGenerator::for_attack(attack, self.config.seed)?;
        let means = if defense.language_agnostic {
            Some(group_means(raw_targets)?)
        } else {
            None
        };
        let mut out = Vec::with_capacity(samples.len());
        for (sample, raw) in samples.iter().zip(raw_targets) {
            let ctx = DefenseContext {
                sample_id: &sample.id,
                group_means: means.as_ref(),
                mask_lang: None,
            };
            let target = apply_defense_stack(raw, defense, &ctx)?;
            let result = invert(&target, self.embedder.as_ref(), &gen, attack)?;
            out.push(Attacked {
                sample,
                raw_target: raw.clone(),
                result,
            });
        }
        Ok(out)
    }

    fn score(attacked: &[Attacked<'_>]) -> Result<(MetricReport, u64)> {
        let mut reports = Vec::with_capacity(attacked.len());
        let mut queries = 0;
        for a in attacked {
            let cos = cosine(&a.result.best.embedding, &a.raw_target)?;
            reports.push(MetricReport::for_pair(
                &a.result.best.text,
                &a.sample.text,
                cos,
            ));
            queries += a.result.queries_used;
        }
        Ok((aggregate(&reports)?, queries))
    }

    /// Reconstruction sweep over `languages` x steps x beams, once with the
    /// language's own vocabulary (`recon/mono`) and, when enabled, once with
    /// the pooled vocabulary of every corpus (`recon/multi`).
    pub fn run_reconstruction(&self, languages: &[String]) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::default();
        let pooled = self.pooled_vocab();
        for lang in languages {
            let samples = self.test_split(lang)?;
            if samples.is_empty() {
                return Err(Error::Empty("test split"));
            }
            let targets = self.embed_targets(samples)?;
            let mut conditions = vec![("recon/mono", self.corpus(lang)?.vocab())];
            if self.config.multi {
                conditions.push(("recon/multi", pooled.clone()));
            }
            for (experiment, vocab) in &conditions {
                for &steps in &self.config.attack.steps {
                    for &beam in &self.config.attack.beams {
                        let start = Instant::now();
                        let attack = self.attack_config(vocab.clone(), steps, beam);
                        let attacked =
                            self.attack_all(samples, &targets, &attack, &DefenseConfig::none())?;
                        let (metrics, queries) = Self::score(&attacked)?;
                        report.rows.push(ExperimentRow {
                            queries,
                            wall_ms: elapsed_ms(start),
                            ..ExperimentRow::new(*experiment, lang.as_str(), steps, beam)
                                .with_metrics(&metrics)
                        });
                    }
                }
            }
        }
        Ok(report)
    }

    /// Attacks `tgt` embeddings with an attacker restricted to the `src`
    /// vocabulary, then scores raw (`crosslingual/vec2text`) and translated
    /// (`crosslingual/adtrans`) reconstructions against the `tgt` text.
    pub fn run_crosslingual(&self, src: &str, tgt: &str) -> Result<ExperimentReport> {
        if !self.translator.supports(src, tgt) {
            return Err(Error::UnsupportedPair {
                src: src.to_owned(),
                tgt: tgt.to_owned(),
            });
        }
        let vocab = self.corpus(src)?.vocab();
        let samples = self.test_split(tgt)?;
        if samples.is_empty() {
            return Err(Error::Empty("test split"));
        }
        let targets = self.embed_targets(samples)?;
        let label = format!("{src}->{tgt}");
        let mut report = ExperimentReport::default();
        for &steps in &self.config.attack.steps {
            for &beam in &self.config.attack.beams {
                let start = Instant::now();
                let attack = self.attack_config(vocab.clone(), steps, beam);
                let attacked =
                    self.attack_all(samples, &targets, &attack, &DefenseConfig::none())?;
                let mut pre = Vec::with_capacity(attacked.len());
                let mut post = Vec::with_capacity(attacked.len());
                let mut queries = 0;
                for a in &attacked {
                    let outcome = adtrans_eval(
                        &a.result.best.text,
                        src,
                        &a.sample.text,
                        tgt,
                        &self.translator,
                        self.embedder.as_ref(),
                    )?;
                    pre.push(outcome.pre);
                    post.push(outcome.post);
                    queries += a.result.queries_used;
                }
                let wall_ms = elapsed_ms(start);
                for (suffix, reports) in [(PRE_SUFFIX, &pre), (POST_SUFFIX, &post)] {
                    report.rows.push(ExperimentRow {
                        queries,
                        wall_ms,
                        ..ExperimentRow::new(
                            format!("crosslingual{suffix}"),
                            label.as_str(),
                            steps,
                            beam,
                        )
                        .with_metrics(&aggregate(reports)?)
                    });
                }
            }
        }
        Ok(report)
    }

    /// The defense cells requested by the config, with report labels.
    pub fn defense_cells(&self) -> Result<Vec<(String, DefenseConfig)>> {
        let sweep = &self.config.defense;
        let seed = self.config.seed;
        let mut cells = vec![("baseline".to_owned(), DefenseConfig::none())];
        for &lambda in &sweep.lambdas {
            cells.push((
                format!("noise={lambda}"),
                DefenseConfig::noise(lambda, seed),
            ));
        }
        if sweep.masking {
            let mut langs: BTreeSet<String> = self.corpora.keys().cloned().collect();
            for t in &self.tasks {
                langs.extend(t.query_languages().into_iter().map(str::to_owned));
                langs.extend(t.doc_languages().into_iter().map(str::to_owned));
            }
            let langs: Vec<String> = langs.into_iter().collect();
            for &scale in &sweep.mask_id_scales {
                let masking = MaskingConfig::for_languages(&langs)?.scaled(scale);
                cells.push((format!("mask(x{scale})"), DefenseConfig::masking(masking)));
            }
        }
        if sweep.language_agnostic {
            cells.push((
                "lang_agnostic".to_owned(),
                DefenseConfig::language_agnostic(),
            ));
        }
        Ok(cells)
    }

    /// For each defense cell: reconstruction metrics per language with the
    /// attack fixed at `defense.steps` steps, mean NDCG@10 over the
    /// retrieval tasks whose queries are in that language, and an `all` row
    /// pooling every language and every task.
    pub fn run_defense_sweep(&self) -> Result<ExperimentReport> {
        let steps = self.config.defense.steps;
        let beam = self.config.defense.beam;
        let languages = self.languages();
        let mut targets = BTreeMap::new();
        for lang in &languages {
            let samples = self.test_split(lang)?;
            targets.insert(lang.clone(), (samples, self.embed_targets(samples)?));
        }
        let mut report = ExperimentReport::default();
        for (label, defense) in self.defense_cells()? {
            let mut task_scores: Vec<(&str, f64)> = Vec::with_capacity(self.tasks.len());
            for task in &self.tasks {
                let lang = task.queries.first().map_or("", |q| q.lang.as_str());
                task_scores.push((lang, evaluate_task(task, self.embedder.as_ref(), &defense)?));
            }
            let mean_ndcg = |filter: Option<&str>| {
                let picked: Vec<f64> = task_scores
                    .iter()
                    .filter(|(l, _)| filter.is_none_or(|f| f == *l))
                    .map(|(_, s)| *s)
                    .collect();
                (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
            };

            let mut per_lang = Vec::with_capacity(languages.len());
            let mut total_queries = 0;
            let cell_start = Instant::now();
            for lang in &languages {
                let start = Instant::now();
                let (samples, raw) = &targets[lang];
                let attack = self.attack_config(self.corpus(lang)?.vocab(), steps, beam);
                let attacked = self.attack_all(samples, raw, &attack, &defense)?;
                let (metrics, queries) = Self::score(&attacked)?;
                total_queries += queries;
                per_lang.push(metrics);
                report.rows.push(ExperimentRow {
                    ndcg: mean_ndcg(Some(lang)),
                    queries,
                    wall_ms: elapsed_ms(start),
                    ..ExperimentRow::new("defense", lang.as_str(), steps, beam)
                        .with_metrics(&metrics)
                        .with_defense(label.as_str())
                });
            }
            report.rows.push(ExperimentRow {
                ndcg: mean_ndcg(None),
                queries: total_queries,
                wall_ms: elapsed_ms(cell_start),
                ..ExperimentRow::new("defense", "all", steps, beam)
                    .with_metrics(&aggregate(&per_lang)?)
                    .with_defense(label.as_str())
            });
        }
        Ok(report)
    }

    /// Mean NDCG@10 of every configured retrieval task under `defense`.
    pub fn run_retrieval(&self, defense: &DefenseConfig) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::default();
        for task in &self.tasks {
            let start = Instant::now();
            let before = self.embedder.queries_used();
            let ndcg = evaluate_task(task, self.embedder.as_ref(), defense)?;
            report.rows.push(ExperimentRow {
                ndcg: Some(ndcg),
                queries: self.embedder.queries_used() - before,
                wall_ms: elapsed_ms(start),
                ..ExperimentRow::new(format!("retrieval/{}", task.name), task.name.as_str(), 0, 0)
                    .with_defense(defense.label())
            });
        }
        Ok(report)
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    // Clamp so a cell never reports zero time on coarse clocks.
    (start.elapsed().as_secs_f64() * 1e3).max(1e-6)
}

pub fn run_reconstruction(
    config: &ExperimentConfig,
    languages: &[String],
) -> Result<ExperimentReport> {
    Lab::new(config.clone())?.run_reconstruction(languages)
}

pub fn run_crosslingual(
    config: &ExperimentConfig,
    src: &str,
    tgt: &str,
) -> Result<ExperimentReport> {
    Lab::new(config.clone())?.run_crosslingual(src, tgt)
}

pub fn run_defense_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Lab::new(config.clone())?.run_defense_sweep()
}
