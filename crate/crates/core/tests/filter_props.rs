mod common;

use std::collections::HashSet;

use common::fixture_dir;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlgen_core::filter::{dedup, filter_samples, FilterConfig, HashEmbedder, ScoreMode};
use vlgen_core::schema::{serialize_box, Provenance, RegionBox, Turn};
use vlgen_core::{CorpusManifest, Sample, TaskType};

fn manifest() -> CorpusManifest {
    CorpusManifest::load(&fixture_dir().join("manifest.jsonl")).unwrap()
}

fn random_samples(seed: u64, n: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nouns = ["cat", "sign", "tree", "man", "cup", "door"];
    (0..n)
        .map(|i| {
            let x1 = rng.random_range(0.0..0.8);
            let y1 = rng.random_range(0.0..0.8);
            let b = RegionBox::new(
                x1,
                y1,
                x1 + rng.random_range(0.05..0.2),
                y1 + rng.random_range(0.05..0.2),
            )
            .unwrap()
            .quantized();
            let noun = nouns[rng.random_range(0..nouns.len())];
            Sample {
                id: format!("s{i}"),
                image_ref: format!("img{:02}.png", rng.random_range(0..50)),
                task: TaskType::Rec,
                turns: vec![Turn::new(format!("Where is the {noun} number {i}?"), serialize_box(&b))],
                provenance: Provenance::Generated,
                generator_meta: None,
            }
        })
        .collect()
}

fn kept_ids(samples: &[Sample], threshold: f64) -> HashSet<String> {
    let config = FilterConfig {
        threshold,
        mode: ScoreMode::Raw,
        ..FilterConfig::new(fixture_dir().join("images"))
    };
    filter_samples(samples.to_vec(), vec![], &HashEmbedder::new(3), &manifest(), &config, 4)
        .kept
        .into_iter()
        .map(|s| s.id)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn raising_the_threshold_only_removes(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let samples = random_samples(seed, 40);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let strict = kept_ids(&samples, hi);
        let lax = kept_ids(&samples, lo);
        prop_assert!(strict.is_subset(&lax));
    }
}

#[test]
fn planted_duplicates_are_dropped() {
    let mut samples = random_samples(9, 83);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..17 {
        let mut copy = samples[rng.random_range(0..83)].clone();
        copy.id = format!("dup{k}");
        // whitespace and case differences do not make a new question
        copy.turns[0].question = copy.turns[0].question.to_uppercase().replace(' ', "  ");
        let at = rng.random_range(0..=samples.len());
        samples.insert(at, copy);
    }
    assert_eq!(samples.len(), 100);
    let (unique, dropped) = dedup(samples.clone());
    assert_eq!(dropped, 17);
    assert_eq!(unique.len(), 83);

    let result = filter_samples(
        samples,
        vec![],
        &HashEmbedder::new(8),
        &manifest(),
        &FilterConfig::new(fixture_dir().join("images")),
        2,
    );
    assert_eq!(result.summary.duplicates, 17);
    assert_eq!(result.kept.len() + result.rejected.len() + 17, 100);
}
