mod common;

use common::oracle_window;
use motionboost::selection::{window_survivors, WINDOW_SWEEP};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_lists_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let n = rng.random_range(0..60);
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..8u8)) / 8.0)
            .collect();
        let one = vec!["a"; n];
        for &w in &WINDOW_SWEEP {
            let got = window_survivors(&one, &scores, w).unwrap();
            assert_eq!(got.len(), n.div_ceil(w));
            assert_eq!(got, oracle_window(&one, &scores, w));
            for (b, &i) in got.iter().enumerate() {
                let block = &scores[b * w..((b + 1) * w).min(n)];
                let best = block.iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(scores[i], best);
                assert!(block[..i - b * w].iter().all(|&s| s < best));
            }
        }
        assert_eq!(
            window_survivors(&one, &scores, 1).unwrap(),
            (0..n).collect::<Vec<_>>()
        );
    }
}

#[test]
fn blocks_do_not_cross_sequences() {
    let seqs = ["a", "a", "a", "b", "b"];
    let scores = [0.1, 0.2, 0.9, 0.5, 0.4];
    assert_eq!(window_survivors(&seqs, &scores, 2).unwrap(), vec![1, 2, 3]);
    assert_eq!(window_survivors(&seqs, &scores, 10).unwrap(), vec![2, 3]);
}

#[test]
fn zero_window_rejected() {
    assert!(window_survivors(&["a"], &[0.5], 0).is_err());
}

proptest! {
    #[test]
    fn multi_sequence_lists_match_brute_force(
        runs in prop::collection::vec((0usize..3, prop::collection::vec(0.0f64..1.0, 1..20)), 0..6),
        w in 1usize..12,
    ) {
        let names = ["x", "y", "z"];
        let mut seqs = Vec::new();
        let mut scores = Vec::new();
        for (s, vals) in &runs {
            for &v in vals {
                seqs.push(names[*s]);
                scores.push(v);
            }
        }
        let got = window_survivors(&seqs, &scores, w).unwrap();
        prop_assert_eq!(&got, &oracle_window(&seqs, &scores, w));
        prop_assert!(got.windows(2).all(|p| p[0] < p[1]));
    }
}
