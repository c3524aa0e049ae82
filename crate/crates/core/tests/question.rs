mod common;

use common::random_tree;
use proptest::prelude::*;
use spanqa_core::corpus::NerSpan;
use spanqa_core::extension::{extend_answer, ExtensionConfig};
use spanqa_core::question::{build_cloze, cloze_to_natural, high_level_mask, wh_word_for, MaskCategory};

const LABELS: [&str; 8] = ["PERSON", "GPE", "DATE", "MONEY", "CARDINAL", "ORG", "EVENT", "LAW"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn questions_hide_the_answer(seed in any::<u64>(), label in 0usize..LABELS.len(), omega in 10.0f64..=100.0) {
        let mut rng = spanqa_core::rng::stream(seed, "question-invariants");
        let tree = random_tree(&mut rng, 8, 40);
        let ne = tree.random_span(&mut rng);
        let s = tree.sentence("q", vec![NerSpan::new(ne.0, ne.1, LABELS[label])]);
        let answer = extend_answer(&s, &s.ner_spans[0], &ExtensionConfig::with_omega(omega).unwrap()).unwrap();
        let cloze = build_cloze(&s, &answer).unwrap();
        prop_assert_eq!(cloze.mask_count(), 1);
        prop_assert_eq!(&cloze.tokens[cloze.mask_position], &cloze.mask_category.mask_token());
        prop_assert_eq!(cloze.tokens.len(), s.tokens.len() - answer.len() + 1);

        let q = cloze_to_natural(&cloze, LABELS[label]);
        // Generated tokens are unique, so any answer token in q would be a leak.
        let answer_tokens = &s.tokens[answer.span.0..answer.span.1];
        prop_assert!(q.iter().all(|t| !answer_tokens.contains(t)));
        let wh = wh_word_for(high_level_mask(LABELS[label]), LABELS[label]);
        prop_assert!(q.join(" ").starts_with(wh));
        prop_assert_eq!(q.len(), wh.split(' ').count() + s.tokens.len() - answer.len());
        prop_assert_eq!(cloze_to_natural(&build_cloze(&s, &answer).unwrap(), LABELS[label]), q);
    }
}

#[test]
fn every_label_has_a_category() {
    for l in LABELS.iter().chain(&["", "work_of_art", "???"]) {
        let c = high_level_mask(l);
        assert!(!wh_word_for(c, l).is_empty());
    }
    assert_eq!(high_level_mask("LOC"), MaskCategory::Place);
    assert_eq!(wh_word_for(MaskCategory::Temporal, "TIME"), "When");
}
