use std::collections::BTreeMap;

use proptest::prelude::*;

use freeseg::backbones::{Embedding, EmbeddingSource};
use freeseg::vocabulary::{
    extract_entities, keyword_decision, match_candidates, CandidateFilter, ClassEmbeddings, DEFAULT_PROMPT,
};
use freeseg::Result;

fn unit(v: &[f32]) -> Embedding {
    Embedding::normalized(v, EmbeddingSource::Text).unwrap()
}

/// Hand-built text space: each string maps to a fixed vector.
fn space(entries: &[(&str, [f32; 4])]) -> impl FnMut(&str) -> Result<Embedding> {
    let table: BTreeMap<String, [f32; 4]> = entries.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    move |s: &str| Ok(unit(&table[s]))
}

#[test]
fn sofa_matches_couch() {
    let classes: Vec<String> = ["unlabeled", "couch", "dog", "tree"].map(String::from).to_vec();
    let mut embed = space(&[
        ("a photo of a couch", [1.0, 0.1, 0.0, 0.0]),
        ("a photo of a dog", [0.0, 1.0, 0.0, 0.0]),
        ("a photo of a tree", [0.0, 0.0, 1.0, 0.0]),
        ("sofa", [0.9, 0.2, 0.0, 0.1]),
        ("dog", [0.1, 1.0, 0.0, 0.0]),
    ]);
    let ce = ClassEmbeddings::compute(&classes, DEFAULT_PROMPT, &mut embed).unwrap();
    let entities = extract_entities("A dog asleep on the sofa");
    assert_eq!(entities.keywords, ["dog", "sofa"]);
    let set = match_candidates(&entities, &classes, &ce, CandidateFilter::KeywordMean, &mut embed).unwrap();
    assert_eq!(set.candidate_names(), ["couch", "dog"]);
    let sofa = &set.per_keyword[1];
    assert_eq!((sofa.keyword.as_str(), sofa.matched), ("sofa", Some(1)));
    assert!(sofa.min_distance < sofa.mean_distance);
}

#[test]
fn keyword_equal_to_a_class_matches_it_at_zero() {
    let classes: Vec<String> = ["unlabeled", "a", "b", "c"].map(String::from).to_vec();
    let mut embed = space(&[
        ("a photo of a a", [1.0, 0.0, 0.0, 0.0]),
        ("a photo of a b", [0.6, 0.8, 0.0, 0.0]),
        ("a photo of a c", [0.0, 0.0, 1.0, 0.0]),
        ("b", [0.6, 0.8, 0.0, 0.0]),
    ]);
    let ce = ClassEmbeddings::compute(&classes, DEFAULT_PROMPT, &mut embed).unwrap();
    let entities = freeseg::vocabulary::EntityList { keywords: vec!["b".into()], source_caption: "b".into() };
    let set = match_candidates(&entities, &classes, &ce, CandidateFilter::KeywordMean, &mut embed).unwrap();
    let k = &set.per_keyword[0];
    assert_eq!(k.matched, Some(2));
    assert!(k.min_distance.abs() < 1e-7);
    // scalar oracle: distances 1 − 0.6, 0, 1 − 0
    let mean = (0.4 + 0.0 + 1.0) / 3.0;
    assert!((k.mean_distance - mean).abs() < 1e-7);
}

#[test]
fn orthogonal_keyword_is_accepted_at_the_boundary() {
    let d = vec![1.0; 5];
    let (nearest, min, mean, accepted) = keyword_decision(&d, None);
    assert_eq!((nearest, min, mean, accepted), (1, 1.0, 1.0, true));
}

#[test]
fn caption_entities() {
    assert_eq!(extract_entities("A small bird perched on a branch of a tree").keywords, ["bird", "branch", "tree"]);
    assert_eq!(extract_entities("two dogs and a dog").keywords, ["dog"]);
}

proptest! {
    #[test]
    fn decisions_are_affine_invariant(
        d in prop::collection::vec(0.0f64..2.0, 1..30),
        a in -5.0f64..5.0,
        b in 1e-3f64..100.0,
    ) {
        let scaled: Vec<f64> = d.iter().map(|v| a + b * v).collect();
        let (i, _, _, ok) = keyword_decision(&d, None);
        let (j, _, _, ok2) = keyword_decision(&scaled, None);
        prop_assert_eq!((i, ok), (j, ok2));
    }

    #[test]
    fn a_farther_class_never_changes_the_match(
        d in prop::collection::vec(0.0f64..2.0, 1..30),
        extra in 0.0f64..1.0,
        at in any::<prop::sample::Index>(),
    ) {
        let (i, _, _, _) = keyword_decision(&d, None);
        let max = d.iter().copied().fold(f64::MIN, f64::max);
        let mut grown = d.clone();
        let pos = at.index(d.len() + 1);
        grown.insert(pos, max + extra + 1e-9);
        let (j, _, _, _) = keyword_decision(&grown, None);
        let expected = if pos < i { i + 1 } else { i };
        prop_assert_eq!(j, expected);
    }

    #[test]
    fn matching_is_deterministic(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let classes: Vec<String> = (0..6).map(|i| if i == 0 { "unlabeled".into() } else { format!("c{i}") }).collect();
        let table: BTreeMap<String, Vec<f32>> = classes[1..]
            .iter()
            .map(|c| format!("a photo of a {c}"))
            .chain(["x", "y", "z"].map(String::from))
            .map(|k| (k, (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
            .collect();
        let mut embed = |s: &str| Embedding::normalized(&table[s], EmbeddingSource::Text);
        let ce = ClassEmbeddings::compute(&classes, DEFAULT_PROMPT, &mut embed).unwrap();
        let entities = freeseg::vocabulary::EntityList {
            keywords: vec!["x".into(), "y".into(), "z".into()],
            source_caption: String::new(),
        };
        let a = match_candidates(&entities, &classes, &ce, CandidateFilter::KeywordMean, &mut embed).unwrap();
        let b = match_candidates(&entities, &classes, &ce, CandidateFilter::KeywordMean, &mut embed).unwrap();
        prop_assert_eq!(a, b);
    }
}
