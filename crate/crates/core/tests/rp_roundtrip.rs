use proptest::prelude::*;
use webrpg_core::rp::{ElementId, RpName, RpPage, RpVector, Vocabulary, PAD_TOKEN, VOCAB_SIZE};

fn legal_vector() -> impl Strategy<Value = RpVector> {
    let vocab = Vocabulary::default();
    let per_param: Vec<Vec<u16>> = RpName::ALL
        .iter()
        .map(|&p| vocab.legal_tokens(p).into_iter().map(|t| t.0).collect())
        .collect();
    proptest::collection::vec(any::<prop::sample::Index>(), 13).prop_map(move |idx| {
        let mut tokens = [0u16; 13];
        for (k, i) in idx.iter().enumerate() {
            tokens[k] = *i.get(&per_param[k]);
        }
        RpVector::from_tokens(tokens)
    })
}

fn legal_page() -> impl Strategy<Value = RpPage> {
    proptest::collection::btree_map(1u32..500, legal_vector(), 0..40)
        .prop_map(|m| m.into_iter().map(|(k, v)| (ElementId(k), v)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn json_round_trip(page in legal_page()) {
        let vocab = Vocabulary::default();
        let json = vocab.to_json(&page).unwrap();
        prop_assert_eq!(vocab.from_json(&json).unwrap(), page.clone());
        prop_assert_eq!(vocab.from_json_snapped(&json).unwrap(), page);
    }

    #[test]
    fn css_round_trip(page in legal_page()) {
        let vocab = Vocabulary::default();
        let css = vocab.emit_css(&page).unwrap();
        prop_assert_eq!(css.lines().count(), page.len());
        prop_assert_eq!(vocab.parse_css_rules(&css).unwrap(), page);
    }

    #[test]
    fn legal_vectors_validate(v in legal_vector()) {
        let vocab = Vocabulary::default();
        prop_assert!(vocab.validate(&v).is_empty());
    }

    #[test]
    fn every_illegal_slot_is_reported(v in legal_vector(), slot in 0usize..13, token in 0u16..VOCAB_SIZE as u16) {
        let vocab = Vocabulary::default();
        let param = RpName::ALL[slot];
        let mut v = v;
        v.0[slot].0 = token;
        let legal = vocab.is_legal(param, v.0[slot]);
        let violations = vocab.validate(&v);
        prop_assert_eq!(violations.is_empty(), legal);
        if !legal {
            prop_assert_eq!(violations.len(), 1);
            prop_assert_eq!(violations[0].slot, param);
        }
    }
}

#[test]
fn pad_is_last_token() {
    assert_eq!(PAD_TOKEN as usize, VOCAB_SIZE - 1);
}
