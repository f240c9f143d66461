//! Reconstruction and retrieval metrics.

use std::collections::HashMap;

use invlab::metrics::{
    aggregate, bleu, ndcg_at_k, rouge1_recall, token_f1, tokenize, MetricReport,
};

fn main() -> invlab::Result<()> {
    let (pred, reference) = ("the cat sat on a mat", "The cat sat on the mat.");
    println!("tokens: {:?}", tokenize(reference));
    println!(
        "bleu {:.3}  rouge1 {:.3}  f1 {:.3}",
        bleu(pred, reference),
        rouge1_recall(pred, reference),
        token_f1(pred, reference)
    );

    let reports = [
        MetricReport::for_pair(pred, reference, 0.93),
        MetricReport::for_pair(reference, reference, 1.0),
    ];
    println!("{:#?}", aggregate(&reports)?);

    let qrels = HashMap::from([("d7".to_string(), 1)]);
    println!(
        "ndcg@10 with the relevant doc at rank 2: {:.4}",
        ndcg_at_k(&["d1", "d7", "d3"], &qrels, 10)
    );
    Ok(())
}
