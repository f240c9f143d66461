//! Cross-lingual reconstruction scored before and after ad hoc translation.

use invlab::adtrans::{adtrans_eval, round_trip};
use invlab::inversion::{invert, AttackConfig, EditGenerator};
use invlab::synth::SyntheticSuite;
use invlab::{BlackBoxEmbedder, NgramConfig, NgramEmbedder};

fn main() -> invlab::Result<()> {
    let suite = SyntheticSuite::new(6);
    let translator = suite.translator();
    let e = NgramEmbedder::new(NgramConfig::default())?;

    // The attacker only knows English words; the leaked vector is German.
    let config = AttackConfig::new(suite.vocab("en"), 20, 4, 4);
    let gen = EditGenerator::for_attack(&config, 0)?;
    for sample in suite.corpus("de", 3) {
        let guess = invert(&e.embed(&sample.text)?, &e, &gen, &config)?
            .best
            .text;
        let out = adtrans_eval(&guess, "en", &sample.text, "de", &translator, &e)?;
        println!(
            "{:?} -> {:?}: bleu {:.1} -> {:.1} (gain {:?})",
            sample.text, guess, out.pre.bleu, out.post.bleu, out.gain_pct
        );
    }
    let text = suite.corpus("en", 1).remove(0).text;
    println!(
        "round trip via es: {:?} -> {:?}",
        text,
        round_trip(&text, "en", "es", &translator)?
    );
    Ok(())
}
