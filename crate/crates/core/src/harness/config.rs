//! JSON experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::NgramConfig;
use crate::error::{Error, Result};
use crate::synth::SuiteFiles;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSweep {
    pub steps: Vec<usize>,
    pub beams: Vec<usize>,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<u64>,
}

impl Default for AttackSweep {
    fn default() -> Self {
        Self {
            steps: vec![0, 1, 20, 50],
            beams: vec![1, 4, 8],
            max_tokens: 6,
            query_budget: None,
        }
    }
}

fn default_defense_steps() -> usize {
    10
}

fn default_defense_beam() -> usize {
    4
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 1e-3, 1e-2, 1e-1, 1.0]
}

fn default_mask_scales() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSweep {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "crate::harness::config::default_true")]
    pub masking: bool,
    /// Each scale adds a masking cell with ids `scale * 1.0, scale * 2.0, ...`.
    #[serde(default = "default_mask_scales")]
    pub mask_id_scales: Vec<f64>,
    #[serde(default = "crate::harness::config::default_true")]
    pub language_agnostic: bool,
    /// Correction steps of the attack run against defended embeddings.
    #[serde(default = "default_defense_steps")]
    pub steps: usize,
    #[serde(default = "default_defense_beam")]
    pub beam: usize,
}

impl Default for DefenseSweep {
    fn default() -> Self {
        Self {
            lambdas: default_lambdas(),
            masking: true,
            mask_id_scales: default_mask_scales(),
            language_agnostic: true,
            steps: default_defense_steps(),
            beam: default_defense_beam(),
        }
    }
}

pub(crate) fn default_true() -> bool {
    true
}

fn default_test_samples() -> usize {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub src: String,
    pub tgt: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFile {
    pub name: String,
    pub queries: PathBuf,
    pub docs: PathBuf,
    pub qrels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// JSONL corpus per language code.
    pub corpora: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub embedder: NgramConfig,
    #[serde(default)]
    pub attack: AttackSweep,
    #[serde(default)]
    pub defense: DefenseSweep,
    #[serde(default)]
    pub dictionaries: Vec<DictionaryFile>,
    #[serde(default)]
    pub retrieval_tasks: Vec<TaskFile>,
    #[serde(default)]
    pub seed: u64,
    /// Samples attacked per language.
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    /// Also attack each language with the pooled multilingual vocabulary.
    #[serde(default = "default_true")]
    pub multi: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Address of an embedding service; when set every embed call goes
    /// over the wire instead of to an in-process embedder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eaas: Option<String>,
}

impl ExperimentConfig {
    /// A config over files written by [`crate::synth::SyntheticSuite::write_to`].
    pub fn for_suite(files: &SuiteFiles, output_dir: PathBuf) -> Self {
        Self {
            corpora: files.corpora.clone(),
            embedder: NgramConfig::default(),
            attack: AttackSweep::default(),
            defense: DefenseSweep::default(),
            dictionaries: files
                .dictionaries
                .iter()
                .map(|(src, tgt, path)| DictionaryFile {
                    src: src.clone(),
                    tgt: tgt.clone(),
                    path: path.clone(),
                })
                .collect(),
            retrieval_tasks: files
                .tasks
                .iter()
                .map(|t| TaskFile {
                    name: t.name.clone(),
                    queries: t.queries.clone(),
                    docs: t.docs.clone(),
                    qrels: t.qrels.clone(),
                })
                .collect(),
            seed: 0,
            test_samples: default_test_samples(),
            multi: true,
            output_dir,
            eaas: None,
        }
    }

    /// Reads a config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpora.values_mut().for_each(fix);
        self.dictionaries.iter_mut().for_each(|d| fix(&mut d.path));
        for t in &mut self.retrieval_tasks {
            fix(&mut t.queries);
            fix(&mut t.docs);
            fix(&mut t.qrels);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        if self.corpora.is_empty() {
            return Err(Error::Config("at least one corpus is required".into()));
        }
        let mut files: Vec<&Path> = self.corpora.values().map(PathBuf::as_path).collect();
        files.extend(self.dictionaries.iter().map(|d| d.path.as_path()));
        for t in &self.retrieval_tasks {
            files.extend([t.queries.as_path(), t.docs.as_path(), t.qrels.as_path()]);
        }
        if let Some(missing) = files.into_iter().find(|p| !p.exists()) {
            return Err(Error::Config(format!(
                "referenced file {} does not exist",
                missing.display()
            )));
        }
        if self.attack.beams.contains(&0) || self.defense.beam == 0 {
            return Err(Error::Config("beam widths must be at least 1".into()));
        }
        if self.attack.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if let Some(l) = self
            .defense
            .lambdas
            .iter()
            .find(|l| !(l.is_finite() && **l >= 0.0))
        {
            return Err(Error::Config(format!(
                "noise lambda {l} must be finite and non-negative"
            )));
        }
        Ok(())
    }
}
