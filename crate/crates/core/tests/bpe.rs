mod common;

use canto_umt::bpe::{join_subwords, learn_bpe, BpeMode, END_MARKER};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn learned_merges_equal_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let counts = common::random_word_counts(&mut rng);
        let table = &learn_bpe(std::slice::from_ref(&counts), 200, BpeMode::Joint)[0];
        assert_eq!(
            table.merges(),
            common::bpe_oracle(&counts.0, 200).as_slice(),
            "corpus {case}"
        );
    }
}

#[test]
fn joint_mode_sums_counts_before_merging() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = common::random_word_counts(&mut rng);
    let b = common::random_word_counts(&mut rng);
    let mut both = a.clone();
    both.merge(&b);
    let joint = &learn_bpe(&[a, b], 50, BpeMode::Joint)[0];
    assert_eq!(joint.merges(), common::bpe_oracle(&both.0, 50).as_slice());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subwords_rejoin_to_the_word(seed in any::<u64>(), n in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = common::random_word_counts(&mut rng);
        let table = &learn_bpe(std::slice::from_ref(&counts), n, BpeMode::Joint)[0];
        for w in counts.0.keys() {
            let subwords = table.apply_word(w);
            prop_assert!(subwords.last().unwrap().ends_with(END_MARKER));
            prop_assert_eq!(&join_subwords(&subwords, END_MARKER).unwrap(), w);
        }
    }

    #[test]
    fn subword_inventory_is_bounded(seed in any::<u64>(), n in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = common::random_word_counts(&mut rng);
        let table = &learn_bpe(std::slice::from_ref(&counts), n, BpeMode::Joint)[0];
        let mut alphabet = std::collections::BTreeSet::new();
        let mut seen = std::collections::BTreeSet::new();
        for w in counts.0.keys() {
            for c in w.chars() {
                alphabet.insert(c.to_string());
                alphabet.insert(format!("{c}{END_MARKER}"));
            }
            seen.extend(table.apply_word(w));
        }
        prop_assert!(seen.len() <= alphabet.len() + table.len());
    }
}
