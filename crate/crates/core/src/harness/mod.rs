//! Experiment orchestration: corpora, configuration, sweeps, reports and
//! the simulated embedding service.

pub mod config;
pub mod corpus;
pub mod eaas;
pub mod experiment;
pub mod report;

pub use config::{AttackSweep, DefenseSweep, DictionaryFile, ExperimentConfig, TaskFile};
pub use corpus::{corpus_vocab, load_jsonl_corpus, write_jsonl_corpus, Corpus};
pub use eaas::{eaas_embed, eaas_serve, EaasClient, EaasService, RemoteEmbedder, ServerHandle};
pub use experiment::{run_crosslingual, run_defense_sweep, run_reconstruction, Lab};
pub use report::{emit_plot_csv, emit_report, ExperimentReport, ExperimentRow, ReportFormat};
