use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use invlab::defenses::{apply_defense_stack, DefenseConfig, DefenseContext};
use invlab::harness::eaas::{eaas_serve, EaasService};
use invlab::harness::experiment::Lab;
use invlab::harness::report::{emit_plot_csv, emit_report, ExperimentReport, ReportFormat};
use invlab::harness::ExperimentConfig;
use invlab::inversion::{invert, AttackConfig, EditGenerator};
use invlab::synth::SyntheticSuite;
use invlab::{BlackBoxEmbedder, Error, NgramConfig, NgramEmbedder, Result};

#[derive(Parser)]
#[command(name = "invlab", version, about = "Black-box embedding inversion lab")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EmbedderArgs {
    #[arg(long, default_value_t = NgramConfig::default().n)]
    ngram: usize,
    #[arg(long, default_value_t = NgramConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Print embeddings of the given texts as JSON lines.
    Embed {
        texts: Vec<String>,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Defense stack as inline JSON.
        #[arg(long)]
        defense: Option<String>,
        #[arg(long)]
        lang: Option<String>,
    },
    /// Invert one text's embedding, or run the reconstruction sweep of the config.
    Attack {
        /// Target text; without it the config's reconstruction sweep runs.
        text: Option<String>,
        /// Whitespace-separated vocabulary for a single-target attack.
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        beam: usize,
        #[arg(long, default_value_t = 6)]
        max_tokens: usize,
        /// Languages for the sweep; defaults to every corpus.
        #[arg(long, value_delimiter = ',')]
        langs: Vec<String>,
        #[command(flatten)]
        embedder: EmbedderArgs,
    },
    /// Defense trade-off sweep: reconstruction and retrieval per defense cell.
    DefendSweep,
    /// Attack target-language embeddings with a source-language vocabulary.
    Crosslingual {
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
    },
    /// Mean NDCG@10 of every configured retrieval task.
    Retrieve {
        #[arg(long)]
        defense: Option<String>,
    },
    /// Serve embeddings over newline-delimited JSON.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        defense: Option<String>,
        #[command(flatten)]
        embedder: EmbedderArgs,
    },
    /// Render a report CSV as Markdown or CSV.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic four-language suite plus a config pointing at it.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        corpus_size: usize,
        #[arg(long, default_value_t = 100)]
        task_docs: usize,
    },
}

impl EmbedderArgs {
    fn config(&self, cli: &Cli) -> Result<NgramConfig> {
        if let Some(path) = &cli.config {
            return Ok(ExperimentConfig::load(path)?.embedder);
        }
        Ok(NgramConfig {
            n: self.ngram,
            dim: self.dim,
            seed: self.embed_seed,
            unit_norm: true,
        })
    }
}

fn parse_defense(json: Option<&str>) -> Result<DefenseConfig> {
    let defense = match json {
        Some(text) => serde_json::from_str(text)?,
        None => DefenseConfig::none(),
    };
    defense.validate()?;
    Ok(defense)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn write_outputs(report: &ExperimentReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    emit_report(report, ReportFormat::Csv, &csv)?;
    emit_report(
        report,
        ReportFormat::Markdown,
        &dir.join(format!("{stem}.md")),
    )?;
    println!("wrote {}", csv.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Embed {
            texts,
            embedder,
            defense,
            lang,
        } => {
            let e = NgramEmbedder::new(embedder.config(cli)?)?;
            let defense = parse_defense(defense.as_deref())?;
            for text in texts {
                let mut v = e.embed(text)?;
                v.set_lang(lang.clone());
                let ctx = DefenseContext::for_sample(text);
                let out = apply_defense_stack(&v, &defense, &ctx)?;
                println!("{}", serde_json::to_string(out.values())?);
            }
        }
        Command::Attack {
            text: Some(text),
            vocab,
            steps,
            beam,
            max_tokens,
            embedder,
            ..
        } => {
            let e = NgramEmbedder::new(embedder.config(cli)?)?;
            let vocab: Vec<String> = match vocab {
                Some(v) => v.split_whitespace().map(str::to_owned).collect(),
                None => text
                    .split_whitespace()
                    .map(str::to_owned)
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            let config = AttackConfig::new(vocab, *steps, *beam, *max_tokens);
            let gen = EditGenerator::for_attack(&config, cli.seed.unwrap_or(0))?;
            let target = e.embed(text)?;
            let result = invert(&target, &e, &gen, &config)?;
            println!(
                "{}",
                serde_json::json!({
                    "text": result.best.text,
                    "score": result.best.score,
                    "queries": result.queries_used,
                    "terminated": format!("{:?}", result.terminated),
                    "beam_history": result.beam_history,
                })
            );
        }
        Command::Attack {
            text: None, langs, ..
        } => {
            let lab = Lab::new(load_config(cli)?)?;
            let langs = if langs.is_empty() {
                lab.languages()
            } else {
                langs.clone()
            };
            let report = lab.run_reconstruction(&langs)?;
            write_outputs(&report, &lab.config().output_dir, "reconstruction")?;
        }
        Command::DefendSweep => {
            let lab = Lab::new(load_config(cli)?)?;
            let report = lab.run_defense_sweep()?;
            let dir = &lab.config().output_dir;
            write_outputs(&report, dir, "defense")?;
            emit_plot_csv(&report, &dir.join("defense_plot.csv"))?;
        }
        Command::Crosslingual { src, tgt } => {
            let lab = Lab::new(load_config(cli)?)?;
            let report = lab.run_crosslingual(src, tgt)?;
            write_outputs(
                &report,
                &lab.config().output_dir,
                &format!("crosslingual.{src}-{tgt}"),
            )?;
        }
        Command::Retrieve { defense } => {
            let lab = Lab::new(load_config(cli)?)?;
            let report = lab.run_retrieval(&parse_defense(defense.as_deref())?)?;
            for row in &report.rows {
                println!("{}\t{:.4}", row.lang, row.ndcg.unwrap_or(0.0));
            }
            write_outputs(&report, &lab.config().output_dir, "retrieval")?;
        }
        Command::Serve {
            addr,
            defense,
            embedder,
        } => {
            let e = NgramEmbedder::new(embedder.config(cli)?)?;
            let service =
                EaasService::new(std::sync::Arc::new(e), parse_defense(defense.as_deref())?);
            let handle = eaas_serve(service, addr.as_str())?;
            println!("listening on {}", handle.addr());
            handle.join();
        }
        Command::Report {
            input,
            format,
            output,
        } => {
            let report = ExperimentReport::read_csv(input)?;
            match output {
                Some(path) => emit_report(&report, *format, path)?,
                None => match format {
                    ReportFormat::Csv => print!("{}", report.to_csv_string()?),
                    ReportFormat::Markdown => print!("{}", report.to_markdown()),
                },
            }
        }
        Command::Synth {
            dir,
            corpus_size,
            task_docs,
        } => {
            std::fs::create_dir_all(dir)?;
            // The config loader resolves relative paths against the config's
            // own directory, so record absolute ones.
            let dir = &dir.canonicalize()?;
            let files = SyntheticSuite::new(cli.seed.unwrap_or(0)).write_to(
                dir,
                *corpus_size,
                *task_docs,
            )?;
            let out = cli.out.clone().unwrap_or_else(|| dir.join("out"));
            let mut config = ExperimentConfig::for_suite(&files, out);
            config.seed = cli.seed.unwrap_or(0);
            let path = dir.join("config.json");
            config.save(&path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
