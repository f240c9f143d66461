//! Embedding defenses: Gaussian noise insertion, language-id masking of
//! dimension 0 and language-agnostic mean subtraction.
//!
//! [`apply_defense_stack`] composes them in a fixed order:
//! language-agnostic, then noise, then masking, then optional
//! re-normalization. Masking runs after noise so dimension 0 always carries
//! the exact language id.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::embedding::{Embedding, MIN_DIM};
use crate::error::{Error, Result};

/// Per-language identifiers written into dimension 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub language_ids: BTreeMap<String, f64>,
}

impl MaskingConfig {
    /// Ids 1.0, 2.0, ... over the sorted language codes.
    pub fn for_languages<S: AsRef<str>>(langs: &[S]) -> Result<Self> {
        let set: BTreeSet<String> = langs.iter().map(|l| l.as_ref().to_owned()).collect();
        Ok(Self {
            language_ids: assign_language_ids(&set)?,
        })
    }

    /// Multiplies every id by `factor`, e.g. 0.05 for a low-magnitude mask.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.language_ids.values_mut().for_each(|id| *id *= factor);
        self
    }

    pub fn id_for(&self, lang: &str) -> Result<f64> {
        self.language_ids
            .get(lang)
            .copied()
            .ok_or_else(|| Error::UnknownLanguage(lang.to_owned()))
    }
}

/// Declarative description of a defense stack.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DefenseConfig {
    /// Noise scale; 0 disables noise.
    #[serde(default)]
    pub noise_lambda: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masking: Option<MaskingConfig>,
    #[serde(default)]
    pub language_agnostic: bool,
    #[serde(default)]
    pub renormalize_after: bool,
}

impl DefenseConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn noise(lambda: f64, seed: u64) -> Self {
        Self {
            noise_lambda: lambda,
            noise_seed: seed,
            ..Self::default()
        }
    }

    pub fn masking(masking: MaskingConfig) -> Self {
        Self {
            masking: Some(masking),
            ..Self::default()
        }
    }

    pub fn language_agnostic() -> Self {
        Self {
            language_agnostic: true,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.noise_lambda == 0.0
            && self.masking.is_none()
            && !self.language_agnostic
            && !self.renormalize_after
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_lambda.is_finite() && self.noise_lambda >= 0.0) {
            return Err(Error::Config(format!(
                "noise lambda must be finite and non-negative, got {}",
                self.noise_lambda
            )));
        }
        if let Some(masking) = &self.masking {
            let mut seen: Vec<f64> = Vec::with_capacity(masking.language_ids.len());
            for (lang, id) in &masking.language_ids {
                if !id.is_finite() {
                    return Err(Error::Config(format!(
                        "language id for `{lang}` is not finite"
                    )));
                }
                if seen.contains(id) {
                    return Err(Error::Config(format!("language id {id} is assigned twice")));
                }
                seen.push(*id);
            }
        }
        Ok(())
    }

    /// Short human-readable label used in reports.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.language_agnostic {
            parts.push("lang_agnostic".to_owned());
        }
        if self.noise_lambda > 0.0 {
            parts.push(format!("noise={}", self.noise_lambda));
        }
        if let Some(m) = &self.masking {
            let scale = m.language_ids.values().fold(0.0f64, |a, b| a.max(b.abs()));
            parts.push(format!("mask(max_id={scale})"));
        }
        if self.renormalize_after {
            parts.push("renorm".to_owned());
        }
        if parts.is_empty() {
            "none".to_owned()
        } else {
            parts.join("+")
        }
    }
}

/// Adds `lambda`-scaled standard-normal noise drawn from `rng`, one draw per
/// component in index order.
pub fn noise_insert<R: Rng + ?Sized>(e: &Embedding, lambda: f64, rng: &mut R) -> Result<Embedding> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!(
            "noise lambda must be finite and non-negative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(e.clone());
    }
    Ok(e.map_values(|v| {
        let eps: f64 = rng.sample(StandardNormal);
        v + lambda * eps
    }))
}

/// The noise stream for one embedding, derived from the defense seed and the
/// sample id so parallel evaluation stays reproducible.
pub fn noise_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(XxHash64::oneshot(seed, sample_id.as_bytes()))
}

/// Sorted language codes mapped to 1.0, 2.0, 3.0, ...
pub fn assign_language_ids(langs: &BTreeSet<String>) -> Result<BTreeMap<String, f64>> {
    if langs.is_empty() {
        return Err(Error::Empty("language set"));
    }
    Ok(langs
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), (i + 1) as f64))
        .collect())
}

/// Overwrites dimension 0 with the language id.
pub fn mask_language(e: &Embedding, id: f64) -> Result<Embedding> {
    if e.dim() < MIN_DIM {
        return Err(Error::InvalidEmbedding(format!(
            "masking needs at least {MIN_DIM} dimensions, got {}",
            e.dim()
        )));
    }
    let mut values = e.values().to_vec();
    values[0] = id;
    Embedding::new(values, e.lang().map(str::to_owned))
}

fn group_key(e: &Embedding) -> String {
    e.lang().unwrap_or_default().to_owned()
}

/// Component-wise mean per language; untagged embeddings share the `""` group.
pub fn group_means(batch: &[Embedding]) -> Result<BTreeMap<String, Embedding>> {
    let first = batch.first().ok_or(Error::Empty("embedding batch"))?;
    let dim = first.dim();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for e in batch {
        e.check_dim(dim)?;
        let (sum, count) = sums
            .entry(group_key(e))
            .or_insert_with(|| (vec![0.0; dim], 0));
        sum.iter_mut().zip(e.values()).for_each(|(s, v)| *s += v);
        *count += 1;
    }
    sums.into_iter()
        .map(|(lang, (sum, count))| {
            let mean = sum.into_iter().map(|s| s / count as f64).collect();
            let tag = (!lang.is_empty()).then(|| lang.clone());
            Ok((lang, Embedding::new(mean, tag)?))
        })
        .collect()
}

/// Subtracts the per-language mean from every embedding of that language.
pub fn language_agnostic(batch: &[Embedding]) -> Result<Vec<Embedding>> {
    let means = group_means(batch)?;
    batch
        .iter()
        .map(|e| subtract_mean(e, &means[&group_key(e)]))
        .collect()
}

pub fn subtract_mean(e: &Embedding, mean: &Embedding) -> Result<Embedding> {
    mean.check_dim(e.dim())?;
    let mut values = e.values().to_vec();
    values
        .iter_mut()
        .zip(mean.values())
        .for_each(|(v, m)| *v -= m);
    Embedding::new(values, e.lang().map(str::to_owned))
}

/// Side information the stack needs for one embedding.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefenseContext<'a> {
    /// Keys the noise stream.
    pub sample_id: &'a str,
    /// Language means for the language-agnostic stage.
    pub group_means: Option<&'a BTreeMap<String, Embedding>>,
    /// Language whose id is used for masking; defaults to the embedding's own.
    pub mask_lang: Option<&'a str>,
}

impl<'a> DefenseContext<'a> {
    pub fn for_sample(sample_id: &'a str) -> Self {
        Self {
            sample_id,
            ..Self::default()
        }
    }
}

/// Applies language-agnostic, noise, masking and re-normalization, skipping
/// disabled stages.
pub fn apply_defense_stack(
    e: &Embedding,
    config: &DefenseConfig,
    context: &DefenseContext<'_>,
) -> Result<Embedding> {
    config.validate()?;
    let mut out = e.clone();
    if config.language_agnostic {
        let key = group_key(e);
        let mean = context
            .group_means
            .and_then(|m| m.get(&key))
            .ok_or_else(|| Error::UnknownLanguage(key.clone()))?;
        out = subtract_mean(&out, mean)?;
    }
    if config.noise_lambda > 0.0 {
        let mut rng = noise_rng(config.noise_seed, context.sample_id);
        out = noise_insert(&out, config.noise_lambda, &mut rng)?;
    }
    if let Some(masking) = &config.masking {
        let lang = context
            .mask_lang
            .or(e.lang())
            .ok_or_else(|| Error::UnknownLanguage("<untagged>".into()))?;
        out = mask_language(&out, masking.id_for(lang)?)?;
    }
    if config.renormalize_after {
        out = out.normalized();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f64], lang: &str) -> Embedding {
        Embedding::new(v.to_vec(), Some(lang.to_owned())).unwrap()
    }

    fn langs(codes: &[&str]) -> BTreeSet<String> {
        codes.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_lambda_is_identity() {
        let e = emb(&[0.3, -1.2, 4.0], "en");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(noise_insert(&e, 0.0, &mut rng).unwrap(), e);
    }

    #[test]
    fn negative_lambda_rejected() {
        let e = emb(&[0.3, -1.2], "en");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            noise_insert(&e, -0.1, &mut rng),
            Err(Error::Config(_))
        ));
        let config = DefenseConfig::noise(-1.0, 0);
        assert!(apply_defense_stack(&e, &config, &DefenseContext::default()).is_err());
    }

    #[test]
    fn noise_on_zero_vector_reproduces_seeded_draws() {
        let seed = 4242;
        let e = Embedding::zeros(16).unwrap();
        let out = noise_insert(&e, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut independent = ChaCha8Rng::seed_from_u64(seed);
        let expected: Vec<f64> = (0..16)
            .map(|_| {
                <StandardNormal as rand_distr::Distribution<f64>>::sample(
                    &StandardNormal,
                    &mut independent,
                )
            })
            .collect();
        assert_eq!(out.values(), expected.as_slice());
        let again = noise_insert(&e, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn noise_has_unit_standard_deviation() {
        let lambda = 0.25;
        let e = emb(&vec![0.5; 100], "en");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut scaled = Vec::with_capacity(10_000);
        for _ in 0..100 {
            let out = noise_insert(&e, lambda, &mut rng).unwrap();
            scaled.extend(
                out.values()
                    .iter()
                    .zip(e.values())
                    .map(|(o, i)| (o - i) / lambda),
            );
        }
        let n = scaled.len() as f64;
        let mean = scaled.iter().sum::<f64>() / n;
        let var = scaled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 1.0).abs() < 0.05, "sd = {}", var.sqrt());
    }

    #[test]
    fn language_ids_follow_sorted_order() {
        let ids = assign_language_ids(&langs(&["fr", "en", "es", "de"])).unwrap();
        let expected: BTreeMap<String, f64> = [("de", 1.0), ("en", 2.0), ("es", 3.0), ("fr", 4.0)]
            .into_iter()
            .map(|(l, i)| (l.to_owned(), i))
            .collect();
        assert_eq!(ids, expected);
        assert_eq!(assign_language_ids(&langs(&["en"])).unwrap()["en"], 1.0);
        assert_eq!(
            ids,
            assign_language_ids(&langs(&["de", "en", "es", "fr"])).unwrap()
        );
        assert!(assign_language_ids(&BTreeSet::new()).is_err());
    }

    #[test]
    fn masking_substitutes_dimension_zero() {
        let e = emb(&[0.9, 0.2, 0.4], "en");
        let masked = mask_language(&e, 2.0).unwrap();
        assert_eq!(masked.values(), &[2.0, 0.2, 0.4]);
        assert_eq!(masked.lang(), Some("en"));
        assert_eq!(mask_language(&masked, 2.0).unwrap(), masked);
    }

    #[test]
    fn language_agnostic_examples() {
        let single = language_agnostic(&[emb(&[0.4, 0.7], "en")]).unwrap();
        assert!(single[0].is_zero());

        let out = language_agnostic(&[emb(&[1.0, 0.0], "en"), emb(&[3.0, 2.0], "en")]).unwrap();
        assert_eq!(out[0].values(), &[-1.0, -1.0]);
        assert_eq!(out[1].values(), &[1.0, 1.0]);

        assert!(language_agnostic(&[]).is_err());
        assert!(language_agnostic(&[emb(&[1.0, 0.0], "en"), emb(&[1.0, 0.0, 0.0], "en")]).is_err());
    }

    #[test]
    fn stack_all_disabled_is_identity() {
        let e = emb(&[0.1, 0.2, 0.3], "de");
        let out =
            apply_defense_stack(&e, &DefenseConfig::none(), &DefenseContext::default()).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn stack_masking_only_matches_single_stage() {
        let e = emb(&[0.1, 0.2, 0.3], "en");
        let masking = MaskingConfig {
            language_ids: [("en".to_owned(), 2.0)].into_iter().collect(),
        };
        let out = apply_defense_stack(
            &e,
            &DefenseConfig::masking(masking),
            &DefenseContext::default(),
        )
        .unwrap();
        assert_eq!(out, mask_language(&e, 2.0).unwrap());
    }

    #[test]
    fn stack_masking_overwrites_noise() {
        let e = emb(&[0.1, 0.2, 0.3, 0.4], "en");
        let config = DefenseConfig {
            noise_lambda: 1e-3,
            noise_seed: 3,
            masking: Some(MaskingConfig::for_languages(&["de", "en"]).unwrap()),
            ..Default::default()
        };
        let out = apply_defense_stack(&e, &config, &DefenseContext::for_sample("s1")).unwrap();
        assert_eq!(out.values()[0], 2.0);
        assert_ne!(out.values()[1], 0.2);
    }

    #[test]
    fn stack_masking_unknown_language_errors() {
        let e = emb(&[0.1, 0.2], "sw");
        let config = DefenseConfig::masking(MaskingConfig::for_languages(&["en"]).unwrap());
        let err = apply_defense_stack(&e, &config, &DefenseContext::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLanguage(l) if l == "sw"));
    }

    #[test]
    fn stack_mask_lang_override() {
        let e = emb(&[0.1, 0.2], "en");
        let config = DefenseConfig::masking(MaskingConfig::for_languages(&["de", "en"]).unwrap());
        let ctx = DefenseContext {
            mask_lang: Some("de"),
            ..Default::default()
        };
        assert_eq!(
            apply_defense_stack(&e, &config, &ctx).unwrap().values()[0],
            1.0
        );
    }

    #[test]
    fn stack_language_agnostic_uses_context_means() {
        let batch = [emb(&[1.0, 0.0], "en"), emb(&[3.0, 2.0], "en")];
        let means = group_means(&batch).unwrap();
        let ctx = DefenseContext {
            group_means: Some(&means),
            ..Default::default()
        };
        let out =
            apply_defense_stack(&batch[1], &DefenseConfig::language_agnostic(), &ctx).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0]);
        assert!(apply_defense_stack(
            &batch[1],
            &DefenseConfig::language_agnostic(),
            &DefenseContext::default()
        )
        .is_err());
    }

    #[test]
    fn renormalize_after_masking() {
        let e = emb(&[0.6, 0.8], "en");
        let config = DefenseConfig {
            masking: Some(MaskingConfig::for_languages(&["en"]).unwrap()),
            renormalize_after: true,
            ..Default::default()
        };
        let out = apply_defense_stack(&e, &config, &DefenseContext::default()).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let config = DefenseConfig::masking(MaskingConfig {
            language_ids: [("de".to_owned(), 1.0), ("en".to_owned(), 1.0)]
                .into_iter()
                .collect(),
        });
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let config = DefenseConfig {
            noise_lambda: 0.01,
            noise_seed: 77,
            masking: Some(
                MaskingConfig::for_languages(&["de", "en", "fr"])
                    .unwrap()
                    .scaled(0.05),
            ),
            language_agnostic: true,
            renormalize_after: true,
        };
        let json = serde_json::to_string(&config).unwrap();
        let back: DefenseConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        let minimal: DefenseConfig = serde_json::from_str("{}").unwrap();
        assert!(minimal.is_identity());
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 2..24)
    }

    proptest! {
        #[test]
        fn noise_zero_identity_prop(v in vec_strategy(), seed in any::<u64>()) {
            let e = emb(&v, "en");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert_eq!(noise_insert(&e, 0.0, &mut rng).unwrap(), e);
        }

        #[test]
        fn masking_changes_at_most_one_component(v in vec_strategy(), id in -3.0f64..3.0) {
            let e = emb(&v, "en");
            let out = mask_language(&e, id).unwrap();
            let changed = out.values().iter().zip(e.values()).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, usize::from(id != v[0]));
            prop_assert_eq!(mask_language(&out, id).unwrap(), out);
        }

        #[test]
        fn language_agnostic_zeroes_group_means(
            rows in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 6), 0usize..3), 1..20)
        ) {
            let codes = ["de", "en", "fr"];
            let batch: Vec<Embedding> = rows.iter().map(|(v, l)| emb(v, codes[*l])).collect();
            let out = language_agnostic(&batch).unwrap();
            for mean in group_means(&out).unwrap().values() {
                prop_assert!(mean.norm() < 1e-9);
            }
        }

        #[test]
        fn stack_is_deterministic(v in vec_strategy(), seed in any::<u64>(), lambda in 0.0f64..2.0) {
            let e = emb(&v, "fr");
            let config = DefenseConfig {
                noise_lambda: lambda,
                noise_seed: seed,
                masking: Some(MaskingConfig::for_languages(&["en", "fr"]).unwrap()),
                ..Default::default()
            };
            let ctx = DefenseContext::for_sample("doc-9");
            prop_assert_eq!(
                apply_defense_stack(&e, &config, &ctx).unwrap(),
                apply_defense_stack(&e, &config, &ctx).unwrap()
            );
        }
    }
}
