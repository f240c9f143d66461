//! Hashed n-gram embeddings and cosine similarity.

use invlab::{cosine, BlackBoxEmbedder, NgramConfig, NgramEmbedder};

fn main() -> invlab::Result<()> {
    let e = NgramEmbedder::new(NgramConfig {
        n: 3,
        dim: 256,
        seed: 7,
        unit_norm: true,
    })?;
    let texts = ["the cat sat", "the cat sits", "a dog barked", ""];
    let vecs = e.embed_batch(&texts.map(String::from))?;
    for (i, a) in texts.iter().enumerate() {
        for (j, b) in texts.iter().enumerate().skip(i + 1) {
            println!(
                "{a:>14?} vs {b:<14?} cos = {:.4}",
                cosine(&vecs[i], &vecs[j])?
            );
        }
    }
    println!("queries used: {}", e.queries_used());
    Ok(())
}
