//! Full experiment pipeline on a synthetic suite: reconstruction sweep,
//! cross-lingual sweep and defense trade-off, rendered as Markdown.

use invlab::harness::config::ExperimentConfig;
use invlab::harness::experiment::Lab;
use invlab::synth::SyntheticSuite;

fn main() -> invlab::Result<()> {
    let dir = std::env::temp_dir().join("invlab-example-suite");
    std::fs::create_dir_all(&dir)?;
    let files = SyntheticSuite::new(0).write_to(&dir, 60, 40)?;
    let mut config = ExperimentConfig::for_suite(&files, dir.join("out"));
    config.test_samples = 10;
    config.attack.max_tokens = 4;
    config.attack.steps = vec![0, 1, 20];
    config.attack.beams = vec![1, 4];
    config.defense.lambdas = vec![0.0, 0.01, 1.0];

    let lab = Lab::new(config)?;
    let mut report = lab.run_reconstruction(&["en".into(), "fr".into()])?;
    report.extend(lab.run_crosslingual("en", "fr")?);
    report.extend(lab.run_defense_sweep()?);
    println!("{}", report.to_markdown());
    Ok(())
}
