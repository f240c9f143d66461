//! Brute-force retrieval on synthetic tasks, with and without defenses.

use invlab::defenses::DefenseConfig;
use invlab::retrieval::{build_index, evaluate_task, search};
use invlab::synth::SyntheticSuite;
use invlab::{BlackBoxEmbedder, NgramConfig, NgramEmbedder};

fn main() -> invlab::Result<()> {
    let suite = SyntheticSuite::new(4);
    let e = NgramEmbedder::new(NgramConfig::default())?;

    let task = suite.monolingual_task("es", 50);
    let index = build_index(&task.docs, &e, &DefenseConfig::none())?;
    let query = &task.queries[0];
    println!("query {:?}", query.text);
    for (id, score) in search(&index, &e.embed(&query.text)?, 3)? {
        println!("  {id} {score:.4}");
    }

    for task in suite.retrieval_suite(50) {
        let clean = evaluate_task(&task, &e, &DefenseConfig::none())?;
        let noisy = evaluate_task(&task, &e, &DefenseConfig::noise(0.1, 0))?;
        println!(
            "{:<6} ndcg@10 clean {clean:.3}  noise=0.1 {noisy:.3}",
            task.name
        );
    }
    Ok(())
}
