use chemtext_core::codec::{
    classify_chars, validate_smiles, HydroClass, Vocabulary, ENCODED_LEN, PAD_INDEX, PAD_WIDTH,
};
use proptest::prelude::*;

const ALPHABET: &str = "CNOSPFIBrcnos()[]=#+-@/\\123456789%Hl.";

fn smiles_like() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(ALPHABET.chars().collect::<Vec<_>>()), 1..=250)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #[test]
    fn encoding_is_fixed_width_and_round_trips(corpus in proptest::collection::vec(smiles_like(), 1..6)) {
        let vocab = Vocabulary::build(corpus.iter().map(String::as_str)).unwrap();
        for s in &corpus {
            let e = vocab.encode(s).unwrap();
            prop_assert_eq!(e.indices.len(), ENCODED_LEN);
            let n = s.chars().count();
            prop_assert_eq!(e.content_span, (PAD_WIDTH, PAD_WIDTH + n));
            prop_assert!(e.indices[..PAD_WIDTH].iter().all(|&i| i == PAD_INDEX));
            prop_assert!(e.indices[PAD_WIDTH + n..].iter().all(|&i| i == PAD_INDEX));
            prop_assert!(e.indices[PAD_WIDTH..PAD_WIDTH + n].iter().all(|&i| i != PAD_INDEX));
            prop_assert_eq!(&vocab.decode(&e.indices).unwrap(), s);
            prop_assert_eq!(vocab.encode(s).unwrap(), e);
        }
    }

    #[test]
    fn vocabulary_is_dense_sorted_and_order_independent(mut corpus in proptest::collection::vec(smiles_like(), 1..6)) {
        let a = Vocabulary::build(corpus.iter().map(String::as_str)).unwrap();
        corpus.reverse();
        let b = Vocabulary::build(corpus.iter().map(String::as_str)).unwrap();
        prop_assert_eq!(&a, &b);
        let entries: Vec<(u32, char)> = a.entries().collect();
        prop_assert_eq!(entries.len() + 1, a.size());
        for (k, (ix, ch)) in entries.iter().enumerate() {
            prop_assert_eq!(*ix as usize, k + 1);
            prop_assert_eq!(a.index_of(*ch), Some(*ix));
            prop_assert_eq!(a.char_at(*ix), Some(*ch));
        }
        prop_assert!(entries.windows(2).all(|w| w[0].1 < w[1].1));
    }

    #[test]
    fn classification_is_one_label_per_char(s in "\\PC{0,80}") {
        prop_assert_eq!(classify_chars(&s).len(), s.chars().count());
    }

    #[test]
    fn validation_never_panics(s in "\\PC{0,80}") {
        let r = validate_smiles(&s);
        prop_assert_eq!(r.is_valid(), r.issues.is_empty());
    }
}

#[test]
fn over_long_and_unknown_inputs_are_rejected() {
    let vocab = Vocabulary::build(["CO"]).unwrap();
    assert!(vocab.encode(&"C".repeat(250)).is_ok());
    assert!(vocab.encode(&"C".repeat(251)).is_err());
    assert!(vocab.encode("CN").is_err());
    assert!(vocab.encode("").is_err());
}

#[test]
fn furfural_classes() {
    use HydroClass::*;
    let c = classify_chars("O=Cc1ccco1");
    assert_eq!(
        c,
        vec![Hydrophilic, Neutral, Hydrophobic, Hydrophobic, Neutral, Hydrophobic, Hydrophobic, Hydrophobic, Hydrophilic, Neutral]
    );
}

#[test]
fn bracket_atoms_do_not_count_as_ring_labels() {
    assert!(validate_smiles("[NH4+].[Cl-]").is_valid());
    assert!(validate_smiles("C%12CC%12").is_valid());
    assert!(!validate_smiles("C%12CC").is_valid());
    assert!(!validate_smiles("C[NH4").is_valid());
    assert!(!validate_smiles("C)C(").is_valid());
}
