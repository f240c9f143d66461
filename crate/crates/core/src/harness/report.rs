//! Experiment reports: one row per sweep cell, emitted as CSV or Markdown.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adtrans::gain_pct;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Column order of the CSV output.
pub const CSV_HEADER: [&str; 13] = [
    "experiment_id",
    "lang",
    "steps",
    "beam",
    "defense",
    "bleu",
    "rouge1",
    "token_f1",
    "exact",
    "cos",
    "ndcg",
    "queries",
    "wall_ms",
];

/// Suffixes used by cross-lingual runs for the raw and translated rows.
pub const PRE_SUFFIX: &str = "/vec2text";
pub const POST_SUFFIX: &str = "/adtrans";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub experiment_id: String,
    pub lang: String,
    pub steps: usize,
    pub beam: usize,
    pub defense: String,
    pub bleu: Option<f64>,
    pub rouge1: Option<f64>,
    pub token_f1: Option<f64>,
    pub exact: Option<f64>,
    pub cos: Option<f64>,
    pub ndcg: Option<f64>,
    pub queries: u64,
    pub wall_ms: f64,
}

impl ExperimentRow {
    pub fn new(
        experiment_id: impl Into<String>,
        lang: impl Into<String>,
        steps: usize,
        beam: usize,
    ) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            lang: lang.into(),
            steps,
            beam,
            defense: "none".into(),
            bleu: None,
            rouge1: None,
            token_f1: None,
            exact: None,
            cos: None,
            ndcg: None,
            queries: 0,
            wall_ms: 0.0,
        }
    }

    pub fn with_metrics(mut self, m: &MetricReport) -> Self {
        self.bleu = Some(m.bleu);
        self.rouge1 = Some(m.rouge1_recall);
        self.token_f1 = Some(m.token_f1);
        self.exact = Some(m.exact_match);
        self.cos = Some(m.cos);
        self
    }

    pub fn with_defense(mut self, label: impl Into<String>) -> Self {
        self.defense = label.into();
        self
    }

    /// Table-style label such as `Base (0 Steps)` or `(50 Steps + 8 sbeam)`.
    pub fn condition(&self) -> String {
        let mut label = match (self.steps, self.beam) {
            // The base hypothesis ignores the beam width; rows differ only in it.
            (0, b) if b <= 1 => "Base (0 Steps)".to_owned(),
            (0, b) => format!("Base (0 Steps, {b} sbeam)"),
            (1, b) if b <= 1 => "(1 Step)".to_owned(),
            (1, b) => format!("(1 Step + {b} sbeam)"),
            (s, b) if b <= 1 => format!("({s} Steps)"),
            (s, b) => format!("({s} Steps + {b} sbeam)"),
        };
        if self.defense != "none" {
            let _ = write!(label, " [{}]", self.defense);
        }
        label
    }
}

/// Growth of BLEU from raw to translated reconstruction for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub experiment: String,
    pub lang: String,
    pub steps: usize,
    pub beam: usize,
    pub pre_bleu: f64,
    pub post_bleu: f64,
    pub gain_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn new(rows: Vec<ExperimentRow>) -> Self {
        Self { rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
    }

    /// Copy with every wall time zeroed, for determinism comparisons.
    pub fn without_wall_time(&self) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| ExperimentRow {
                    wall_ms: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn find(
        &self,
        experiment_id: &str,
        lang: &str,
        steps: usize,
        beam: usize,
    ) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| {
            r.experiment_id == experiment_id && r.lang == lang && r.steps == steps && r.beam == beam
        })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::Config(format!(
                "unexpected report header {header:?}"
            )));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ExperimentRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Pairs every `<id>/adtrans` row with its `<id>/vec2text` twin.
    pub fn crosslingual_gains(&self) -> Vec<GainRow> {
        self.rows
            .iter()
            .filter_map(|post| {
                let base = post.experiment_id.strip_suffix(POST_SUFFIX)?;
                let pre_id = format!("{base}{PRE_SUFFIX}");
                let pre = self.find(&pre_id, &post.lang, post.steps, post.beam)?;
                let (pre_bleu, post_bleu) = (pre.bleu?, post.bleu?);
                Some(GainRow {
                    experiment: base.to_owned(),
                    lang: post.lang.clone(),
                    steps: post.steps,
                    beam: post.beam,
                    pre_bleu,
                    post_bleu,
                    gain_pct: gain_pct(pre_bleu, post_bleu),
                })
            })
            .collect()
    }

    /// One section per experiment id, one table per language inside it.
    pub fn to_markdown(&self) -> String {
        let gains = self.crosslingual_gains();
        let mut out = String::new();
        let mut experiments: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !experiments.contains(&r.experiment_id.as_str()) {
                experiments.push(&r.experiment_id);
            }
        }
        for exp in experiments {
            let _ = writeln!(out, "## {exp}\n");
            let rows: Vec<&ExperimentRow> = self
                .rows
                .iter()
                .filter(|r| r.experiment_id == exp)
                .collect();
            let mut langs: Vec<&str> = Vec::new();
            for r in &rows {
                if !langs.contains(&r.lang.as_str()) {
                    langs.push(&r.lang);
                }
            }
            for lang in langs {
                let _ = writeln!(out, "### {lang}\n");
                out.push_str(
                    "| Condition | BLEU | ROUGE-1 | TF1 | Exact | COS | NDCG@10 | Queries | ms |\n",
                );
                out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
                for r in rows.iter().filter(|r| r.lang == lang) {
                    let mut bleu = fmt_opt(r.bleu, 2);
                    if let Some(g) = gains.iter().find(|g| {
                        format!("{}{POST_SUFFIX}", g.experiment) == r.experiment_id
                            && g.lang == r.lang
                            && g.steps == r.steps
                            && g.beam == r.beam
                    }) {
                        if let Some(pct) = g.gain_pct {
                            let arrow = if pct >= 0.0 { '↑' } else { '↓' };
                            let _ = write!(bleu, " ({arrow}{:.2}%)", pct.abs());
                        }
                    }
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} | {} | {} | {} | {} | {:.1} |",
                        r.condition(),
                        bleu,
                        fmt_opt(r.rouge1.map(|v| v * 100.0), 2),
                        fmt_opt(r.token_f1.map(|v| v * 100.0), 2),
                        fmt_opt(r.exact, 1),
                        fmt_opt(r.cos, 4),
                        fmt_opt(r.ndcg, 4),
                        r.queries,
                        r.wall_ms,
                    );
                }
                out.push('\n');
            }
        }
        out
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.digits$}"))
}

/// Writes `report` to `path` in the requested format.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    if report.is_empty() {
        return Err(Error::Empty("experiment report"));
    }
    let body = match format {
        ReportFormat::Csv => report.to_csv_string()?,
        ReportFormat::Markdown => report.to_markdown(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// Plot-ready defense sweep: one line per defense cell with NDCG and BLEU.
pub fn emit_plot_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    if report.is_empty() {
        return Err(Error::Empty("experiment report"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["defense", "lang", "ndcg", "bleu"])?;
    for r in &report.rows {
        w.write_record([
            r.defense.clone(),
            r.lang.clone(),
            r.ndcg.map_or_else(String::new, |v| v.to_string()),
            r.bleu.map_or_else(String::new, |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
