//! Black-box inversion: greedy base hypothesis refined by beam search,
//! checked against the exhaustive oracle.

use invlab::inversion::{exhaustive_oracle, invert, AttackConfig, EditGenerator};
use invlab::{BlackBoxEmbedder, NgramConfig, NgramEmbedder};

fn main() -> invlab::Result<()> {
    let e = NgramEmbedder::new(NgramConfig {
        n: 4,
        dim: 1024,
        seed: 0,
        unit_norm: true,
    })?;
    let vocab: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let secret = "c a b a";
    let target = e.embed(secret)?;

    let config = AttackConfig::new(vocab.clone(), 50, 8, 4);
    let gen = EditGenerator::for_attack(&config, 1)?;
    let result = invert(&target, &e, &gen, &config)?;
    println!(
        "recovered {:?} (score {:.6}) after {} queries, {:?}",
        result.best.text, result.best.score, result.queries_used, result.terminated
    );
    println!("beam history: {:?}", result.beam_history);

    let oracle = exhaustive_oracle(&target, &e, &vocab, 4)?;
    println!("oracle     {:?} (score {:.6})", oracle.text, oracle.score);
    Ok(())
}
