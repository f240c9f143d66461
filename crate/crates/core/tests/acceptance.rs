//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use invlab::adtrans::gain_pct;
use invlab::defenses::{group_means, language_agnostic, DefenseConfig, MaskingConfig};
use invlab::harness::config::ExperimentConfig;
use invlab::harness::eaas::{eaas_serve, EaasService};
use invlab::harness::experiment::Lab;
use invlab::harness::report::{ExperimentReport, ExperimentRow};
use invlab::inversion::{
    enumerate_texts, exhaustive_oracle, invert, AttackConfig, AttackResult, EditGenerator,
};
use invlab::metrics::{bleu, is_exact, ndcg_at_k, tokenize, MetricReport};
use invlab::retrieval::evaluate_task;
use invlab::synth::SyntheticSuite;
use invlab::{cosine, BlackBoxEmbedder, Embedding, NgramConfig, NgramEmbedder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Beam histories of every attack run, checked by the monotonicity criterion.
#[derive(Default)]
struct Runs {
    histories: Vec<Vec<f64>>,
}

impl Runs {
    fn record(&mut self, r: &AttackResult) {
        self.histories.push(r.beam_history.clone());
    }
}

fn strings(tokens: &[&str]) -> Vec<String> {
    tokens.iter().map(|s| s.to_string()).collect()
}

fn toy_embedder(dim: usize) -> NgramEmbedder {
    NgramEmbedder::new(NgramConfig {
        n: 4,
        dim,
        seed: 0,
        unit_norm: true,
    })
    .expect("valid config")
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_equivalence(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let vocab = strings(&["a", "b", "c"]);
    let e = toy_embedder(1024);
    let space = enumerate_texts(&vocab, 4);
    let vecs = e.embed_batch(&space).map_err(|x| x.to_string())?;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            let c = cosine(&vecs[i], &vecs[j]).map_err(|x| x.to_string())?;
            if c >= 1.0 - 1e-9 {
                return Err(format!(
                    "embedder not injective: {:?} vs {:?}",
                    space[i], space[j]
                ));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = 0;
    for i in 0..100u64 {
        let len = rng.random_range(1..=4);
        let text: Vec<&str> = (0..len)
            .map(|_| vocab[rng.random_range(0..3)].as_str())
            .collect();
        let target = e.embed(&text.join(" ")).map_err(|x| x.to_string())?;
        let config = AttackConfig::new(vocab.clone(), 50, 8, 4);
        let gen = EditGenerator::for_attack(&config, i).map_err(|x| x.to_string())?;
        let r = invert(&target, &e, &gen, &config).map_err(|x| x.to_string())?;
        let oracle = exhaustive_oracle(&target, &e, &vocab, 4).map_err(|x| x.to_string())?;
        if (r.best.score - oracle.score).abs() <= 1e-9 {
            hits += 1;
        }
        runs.record(&r);
    }
    let secs = start.elapsed().as_secs_f64();
    let msg = format!("{hits}/100 match the oracle in {secs:.1}s");
    if hits >= 95 && secs < 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn monotone_correction(runs: &mut Runs) -> Outcome {
    let suite = SyntheticSuite::new(5);
    let e = toy_embedder(512);
    let samples = suite.corpus("es", 30);
    let vocab = suite.vocab("es");
    let mut regressions = 0;
    for (i, s) in samples.iter().enumerate() {
        let target = e.embed(&s.text).map_err(|x| x.to_string())?;
        let mut best = Vec::new();
        for steps in [1, 50] {
            let config = AttackConfig::new(vocab.clone(), steps, 8, 4);
            let gen = EditGenerator::for_attack(&config, i as u64).map_err(|x| x.to_string())?;
            let r = invert(&target, &e, &gen, &config).map_err(|x| x.to_string())?;
            best.push(r.best.score);
            runs.record(&r);
        }
        if best[1] < best[0] {
            regressions += 1;
        }
    }
    let decreasing = runs
        .histories
        .iter()
        .filter(|h| h.windows(2).any(|w| w[1] < w[0]))
        .count();
    let msg = format!(
        "{} runs checked, {decreasing} non-monotone histories, {regressions} samples where 50 steps < 1 step",
        runs.histories.len()
    );
    if decreasing == 0 && regressions == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn beam_dominance(runs: &mut Runs) -> Outcome {
    let suite = SyntheticSuite::new(9);
    let e = toy_embedder(512);
    let samples = suite.corpus("fr", 50);
    let vocab = suite.vocab("fr");
    let mut means = Vec::new();
    for b in [1, 4, 8] {
        let mut scores = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let target = e.embed(&s.text).map_err(|x| x.to_string())?;
            let config = AttackConfig::new(vocab.clone(), 10, b, 4);
            let gen = EditGenerator::for_attack(&config, i as u64).map_err(|x| x.to_string())?;
            let r = invert(&target, &e, &gen, &config).map_err(|x| x.to_string())?;
            scores.push(r.best.score);
            runs.record(&r);
        }
        means.push(mean(scores));
    }
    let msg = format!(
        "mean cos b1={:.6} b4={:.6} b8={:.6}",
        means[0], means[1], means[2]
    );
    if means[2] >= means[1] && means[1] >= means[0] {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// A toy suite on disk plus a config sized for quick sweeps.
fn toy_lab(dir: &Path, seed: u64) -> Result<ExperimentConfig, String> {
    let files = SyntheticSuite::new(seed)
        .write_to(dir, 40, 40)
        .map_err(|x| x.to_string())?;
    let mut config = ExperimentConfig::for_suite(&files, dir.join("out"));
    config.seed = seed;
    config.test_samples = 25;
    config.multi = false;
    config.attack.max_tokens = 4;
    config.attack.steps = vec![10];
    config.attack.beams = vec![4];
    Ok(config)
}

fn row_value(
    report: &ExperimentReport,
    defense: &str,
    lang: &str,
    pick: fn(&ExperimentRow) -> Option<f64>,
) -> Result<f64, String> {
    report
        .rows
        .iter()
        .find(|r| r.defense == defense && r.lang == lang)
        .and_then(pick)
        .ok_or_else(|| format!("missing value in row {defense}/{lang}"))
}

fn noise_trend() -> Outcome {
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let mut config = toy_lab(dir.path(), 21)?;
    config.defense.masking = false;
    config.defense.language_agnostic = false;
    let lab = Lab::new(config.clone()).map_err(|x| x.to_string())?;
    let sweep = lab.run_defense_sweep().map_err(|x| x.to_string())?;
    let baseline = lab
        .run_reconstruction(&lab.languages())
        .map_err(|x| x.to_string())?;

    for lang in lab.languages() {
        let base = baseline
            .rows
            .iter()
            .find(|r| r.lang == lang)
            .and_then(|r| r.bleu)
            .ok_or("missing baseline row")?;
        let zero = row_value(&sweep, "noise=0", &lang, |r| r.bleu)?;
        if zero != base {
            return Err(format!(
                "{lang}: BLEU at lambda=0 {zero} differs from baseline {base}"
            ));
        }
    }
    let labels: Vec<String> = config
        .defense
        .lambdas
        .iter()
        .map(|l| format!("noise={l}"))
        .collect();
    let bleus = labels
        .iter()
        .map(|l| row_value(&sweep, l, "all", |r| r.bleu))
        .collect::<Result<Vec<_>, _>>()?;
    let ndcg = |label: &str| row_value(&sweep, label, "all", |r| r.ndcg);
    let (n0, n_small, n_big) = (ndcg("noise=0")?, ndcg("noise=0.001")?, ndcg("noise=1")?);
    let msg = format!(
        "BLEU by lambda {:?}; NDCG@10 lambda=0 {n0:.4}, 1e-3 {n_small:.4}, 1 {n_big:.4}",
        bleus.iter().map(|b| format!("{b:.2}")).collect::<Vec<_>>()
    );
    let trend_ok = bleus.windows(2).all(|w| w[1] <= w[0] + 2.0);
    if trend_ok && (n_small - n0).abs() <= 0.02 && n_big < 0.5 * n0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn masking_tradeoff() -> Outcome {
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let mut config = toy_lab(dir.path(), 33)?;
    config.defense.lambdas = vec![];
    config.defense.language_agnostic = false;
    config.defense.mask_id_scales = vec![1.0];
    let lab = Lab::new(config).map_err(|x| x.to_string())?;
    let sweep = lab.run_defense_sweep().map_err(|x| x.to_string())?;
    let unmasked = row_value(&sweep, "baseline", "all", |r| r.exact)?;
    let masked = row_value(&sweep, "mask(x1)", "all", |r| r.exact)?;

    let suite = SyntheticSuite::new(33);
    let e = toy_embedder(512);
    let small = DefenseConfig::masking(
        MaskingConfig::for_languages(&suite.languages())
            .map_err(|x| x.to_string())?
            .scaled(0.05),
    );
    let mut worst: f64 = 0.0;
    for task in suite.monolingual_tasks(60) {
        let raw = evaluate_task(&task, &e, &DefenseConfig::none()).map_err(|x| x.to_string())?;
        let with_mask = evaluate_task(&task, &e, &small).map_err(|x| x.to_string())?;
        worst = worst.max((raw - with_mask).abs());
    }
    let per_lang: Vec<String> = lab
        .languages()
        .iter()
        .map(|l| {
            let before = row_value(&sweep, "baseline", l, |r| r.exact).unwrap_or(f64::NAN);
            let after = row_value(&sweep, "mask(x1)", l, |r| r.exact).unwrap_or(f64::NAN);
            format!("{l} {before:.0}->{after:.0}")
        })
        .collect();
    let msg = format!(
        "exact {unmasked:.1}% unmasked vs {masked:.1}% masked ({}); largest monolingual NDCG change at 0.05k ids {worst:.4}",
        per_lang.join(", ")
    );
    if masked <= 0.5 * unmasked && worst < 0.01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn language_agnostic_identity() -> Outcome {
    let suite = SyntheticSuite::new(44);
    let e = toy_embedder(512);
    let mut batch = Vec::new();
    for lang in suite.languages() {
        for s in suite.corpus(&lang, 50) {
            batch.push(
                e.embed(&s.text)
                    .map_err(|x| x.to_string())?
                    .with_lang(lang.clone()),
            );
        }
    }
    let centred = language_agnostic(&batch).map_err(|x| x.to_string())?;
    let worst_norm = group_means(&centred)
        .map_err(|x| x.to_string())?
        .values()
        .map(Embedding::norm)
        .fold(0.0, f64::max);

    let tasks = suite.retrieval_suite(60);
    let mut raw = Vec::new();
    let mut agnostic = Vec::new();
    for task in &tasks {
        raw.push(evaluate_task(task, &e, &DefenseConfig::none()).map_err(|x| x.to_string())?);
        agnostic.push(
            evaluate_task(task, &e, &DefenseConfig::language_agnostic())
                .map_err(|x| x.to_string())?,
        );
    }
    let (raw_mean, agnostic_mean) = (mean(raw), mean(agnostic));
    let msg = format!(
        "largest group-mean norm {worst_norm:.2e}; mean NDCG@10 raw {raw_mean:.4} vs agnostic {agnostic_mean:.4} over {} tasks",
        tasks.len()
    );
    if worst_norm < 1e-9 && (raw_mean - agnostic_mean).abs() < 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Independent BLEU: n-grams as token slices counted by linear scans.
fn naive_bleu(pred: &str, reference: &str) -> f64 {
    let p = tokenize(pred);
    let r = tokenize(reference);
    if p.is_empty() || r.is_empty() {
        return if p.is_empty() && r.is_empty() {
            100.0
        } else {
            0.0
        };
    }
    let orders = p.len().min(4);
    let mut logs = 0.0;
    for n in 1..=orders {
        let pg: Vec<&[String]> = p.windows(n).collect();
        let rg: Vec<&[String]> = r.windows(n).collect();
        let mut matched = 0usize;
        let mut seen: Vec<&[String]> = Vec::new();
        for g in &pg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_pred = pg.iter().filter(|x| *x == g).count();
            let in_ref = rg.iter().filter(|x| *x == g).count();
            matched += in_pred.min(in_ref);
        }
        let precision = if matched == 0 {
            1.0 / (2.0 * p.len() as f64)
        } else {
            matched as f64 / pg.len() as f64
        };
        logs += precision.ln();
    }
    let (c, rl) = (p.len() as f64, r.len() as f64);
    let bp = if c < rl { (1.0 - rl / c).exp() } else { 1.0 };
    100.0 * bp * (logs / orders as f64).exp()
}

fn metric_oracles() -> Outcome {
    let hand = bleu("a b c d", "a b c e");
    if (hand - 42.045).abs() > 0.01 {
        return Err(format!("bleu hand example {hand}"));
    }
    for text in [
        "a",
        "Ford urged!",
        "the cat sat on the mat",
        "Ünïcödé, text.",
    ] {
        let r = MetricReport::for_pair(text, text, 1.0);
        if (r.bleu, r.rouge1_recall, r.token_f1, r.exact_match) != (100.0, 1.0, 1.0, 100.0)
            || !is_exact(text, text)
        {
            return Err(format!("identical-string maxima fail on {text:?}: {r:?}"));
        }
    }
    let qrels: HashMap<String, u32> = [("rel".to_string(), 1)].into();
    let nd = ndcg_at_k(&["x", "rel", "y"], &qrels, 10);
    if (nd - 0.6309).abs() > 1e-4 {
        return Err(format!("ndcg rank-2 example {nd}"));
    }
    let words = ["a", "b", "c", "d", "e", "f", ",", "."];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let sentence = |rng: &mut ChaCha8Rng| {
            let len = rng.random_range(0..12);
            (0..len)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let (p, r) = (sentence(&mut rng), sentence(&mut rng));
        worst = worst.max((bleu(&p, &r) - naive_bleu(&p, &r)).abs());
    }
    let msg =
        format!("hand examples hold; largest BLEU gap to naive oracle over 1000 pairs {worst:.1e}");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn adtrans_gain() -> Outcome {
    let gain = gain_pct(4.62, 12.4).ok_or("gain undefined")?;
    if (gain - 168.4).abs() > 0.5 {
        return Err(format!("gain {gain:.2}%"));
    }
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let mut config = toy_lab(dir.path(), 55)?;
    config.attack.steps = vec![0, 10];
    config.attack.beams = vec![1, 4];
    let lab = Lab::new(config).map_err(|x| x.to_string())?;
    let mut report = ExperimentReport::default();
    for tgt in ["de", "es", "fr"] {
        report.extend(lab.run_crosslingual("en", tgt).map_err(|x| x.to_string())?);
    }
    let gains = report.crosslingual_gains();
    let pre = mean(gains.iter().map(|g| g.pre_bleu));
    let post = mean(gains.iter().map(|g| g.post_bleu));
    let msg = format!(
        "gain {gain:.2}%; sweep mean BLEU pre {pre:.2} post {post:.2} over {} cells",
        gains.len()
    );
    if !gains.is_empty() && post >= pre {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn wire_parity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let mut config = toy_lab(dir.path(), 66)?;
    // JSON float text dominates the wire cost, so the overhead grows with
    // the dimension; the parity run uses a compact embedder.
    config.embedder.dim = 128;
    config.test_samples = 20;
    config.multi = true;
    config.attack.steps = vec![0, 10];
    config.attack.beams = vec![1, 4];

    let dim = config.embedder.dim;
    let languages = vec!["en".to_string(), "de".to_string()];
    let local_lab = Lab::new(config.clone()).map_err(|x| x.to_string())?;
    let t = Instant::now();
    let local = local_lab
        .run_reconstruction(&languages)
        .map_err(|x| x.to_string())?;
    let local_time = t.elapsed();

    let server_embedder = Arc::new(NgramEmbedder::new(config.embedder).map_err(|x| x.to_string())?);
    let server = eaas_serve(
        EaasService::new(server_embedder.clone(), DefenseConfig::none()),
        "127.0.0.1:0",
    )
    .map_err(|x| x.to_string())?;
    let mut remote_config = config;
    remote_config.eaas = Some(server.addr().to_string());
    let remote_lab = Lab::new(remote_config).map_err(|x| x.to_string())?;
    let t = Instant::now();
    let remote = remote_lab
        .run_reconstruction(&languages)
        .map_err(|x| x.to_string())?;
    let remote_time = t.elapsed();
    server.stop();

    let same_csv = local
        .without_wall_time()
        .to_csv_string()
        .map_err(|x| x.to_string())?
        == remote
            .without_wall_time()
            .to_csv_string()
            .map_err(|x| x.to_string())?;
    let local_queries = local_lab.embedder().queries_used();
    let server_queries = server_embedder.queries_used();
    let ratio = remote_time.as_secs_f64()
        / local_time
            .as_secs_f64()
            .max(Duration::from_micros(1).as_secs_f64());
    let msg = format!(
        "dim {dim}: CSV identical: {same_csv}; queries local {local_queries} remote {server_queries}; remote/local time {ratio:.2}x"
    );
    if same_csv && local_queries == server_queries && ratio < 5.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let mut runs = Runs::default();
    let mut results: BTreeMap<usize, (&str, Outcome)> = BTreeMap::new();
    results.insert(1, ("oracle equivalence", oracle_equivalence(&mut runs)));
    results.insert(3, ("beam-width dominance", beam_dominance(&mut runs)));
    results.insert(2, ("monotone correction", monotone_correction(&mut runs)));
    results.insert(4, ("noise-defense trend", noise_trend()));
    results.insert(5, ("masking-defense trade-off", masking_tradeoff()));
    results.insert(
        6,
        ("language-agnostic identity", language_agnostic_identity()),
    );
    results.insert(7, ("metric oracles", metric_oracles()));
    results.insert(8, ("adtrans gain", adtrans_gain()));
    results.insert(9, ("wire parity", wire_parity()));

    let mut failed = 0;
    for (n, (name, outcome)) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
