//! Noise, masking and language-agnostic defenses, and what they do to an attack.

use std::collections::BTreeSet;

use invlab::defenses::{
    apply_defense_stack, assign_language_ids, DefenseConfig, DefenseContext, MaskingConfig,
};
use invlab::inversion::{invert, AttackConfig, EditGenerator};
use invlab::synth::SyntheticSuite;
use invlab::{cosine, BlackBoxEmbedder, NgramConfig, NgramEmbedder};

fn main() -> invlab::Result<()> {
    let suite = SyntheticSuite::new(2);
    let e = NgramEmbedder::new(NgramConfig::default())?;
    let sample = &suite.corpus("en", 1)[0];
    let raw = e.embed(&sample.text)?.with_lang("en");

    let langs: BTreeSet<String> = suite.languages().into_iter().collect();
    println!("language ids: {:?}", assign_language_ids(&langs)?);

    let cells = [
        DefenseConfig::none(),
        DefenseConfig::noise(0.01, 9),
        DefenseConfig::noise(1.0, 9),
        DefenseConfig::masking(MaskingConfig::for_languages(&suite.languages())?),
    ];
    let config = AttackConfig::new(suite.vocab("en"), 10, 4, 4);
    let gen = EditGenerator::for_attack(&config, 0)?;
    for defense in &cells {
        let leaked = apply_defense_stack(&raw, defense, &DefenseContext::for_sample(&sample.id))?;
        let r = invert(&leaked, &e, &gen, &config)?;
        println!(
            "{:<16} cos(leaked, raw) {:.3}  recovered {:?}",
            defense.label(),
            cosine(&leaked, &raw)?,
            r.best.text
        );
    }
    println!("secret was {:?}", sample.text);
    Ok(())
}
