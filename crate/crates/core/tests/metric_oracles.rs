mod common;

use common::*;
use motionboost::metrics::{consistency_degree, f_measures, mae, s_measure};
use motionboost::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_pairs_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let h = rng.random_range(1..12);
        let w = rng.random_range(1..12);
        let (p, g) = random_pair(&mut rng, h, w);
        let (pm, gm) = (to_map(&p), to_mask(&g));
        assert!((mae(&pm, &gm).unwrap() - oracle_mae(&p, &g)).abs() < 1e-12);
        assert!((s_measure(&pm, &gm).unwrap() - oracle_s(&p, &g)).abs() < 1e-12);
        match oracle_f(&p, &g) {
            Some((mx, mean, adp)) => {
                let f = f_measures(&pm, &gm).unwrap();
                assert!((f.max_f - mx).abs() < 1e-12);
                assert!((f.mean_f - mean).abs() < 1e-12);
                assert!((f.adp_f - adp).abs() < 1e-12);
            }
            None => assert!(matches!(f_measures(&pm, &gm), Err(Error::UndefinedRecall))),
        }
    }
}

#[test]
fn perfect_and_inverted_predictions() {
    let g = vec![
        vec![false, false, false, false],
        vec![false, true, true, false],
        vec![false, true, true, false],
        vec![false, false, false, false],
    ];
    let perfect: Grid = g
        .iter()
        .map(|r| r.iter().map(|&b| f64::from(u8::from(b))).collect())
        .collect();
    let inverted: Grid = perfect
        .iter()
        .map(|r| r.iter().map(|v| 1.0 - v).collect())
        .collect();
    let (pm, im, gm) = (to_map(&perfect), to_map(&inverted), to_mask(&g));
    assert_eq!(mae(&pm, &gm).unwrap(), 0.0);
    assert_eq!(mae(&im, &gm).unwrap(), 1.0);
    assert!((s_measure(&pm, &gm).unwrap() - 1.0).abs() < 1e-9);
    assert!(s_measure(&im, &gm).unwrap() < 0.1);
    let f = f_measures(&pm, &gm).unwrap();
    assert!((f.max_f - 1.0).abs() < 1e-12);
}

#[test]
fn empty_and_full_masks() {
    let p = to_map(&vec![vec![0.25; 3]; 3]);
    let empty = to_mask(&vec![vec![false; 3]; 3]);
    let full = to_mask(&vec![vec![true; 3]; 3]);
    assert!((s_measure(&p, &empty).unwrap() - 0.75).abs() < 1e-12);
    assert!((s_measure(&p, &full).unwrap() - 0.25).abs() < 1e-12);
    assert!(matches!(
        f_measures(&p, &empty),
        Err(Error::UndefinedRecall)
    ));
}

#[test]
fn dimension_mismatch_is_an_error() {
    let p = to_map(&vec![vec![0.5; 3]; 2]);
    let g = to_mask(&vec![vec![true; 2]; 3]);
    assert!(mae(&p, &g).is_err());
    assert!(s_measure(&p, &g).is_err());
    assert!(f_measures(&p, &g).is_err());
}

fn pair_strategy() -> impl Strategy<Value = (Grid, Mask)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, w), h),
            prop::collection::vec(prop::collection::vec(any::<bool>(), w), h),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_stay_in_unit_range((p, g) in pair_strategy()) {
        let (pm, gm) = (to_map(&p), to_mask(&g));
        let m = mae(&pm, &gm).unwrap();
        let s = s_measure(&pm, &gm).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((0.0..=1.0).contains(&s));
        if let Ok(f) = f_measures(&pm, &gm) {
            prop_assert!(f.mean_f <= f.max_f + 1e-15);
            prop_assert!(f.adp_f <= f.max_f + 1e-15);
            prop_assert!(f.mean_f >= 0.0 && f.max_f <= 1.0);
        }
    }

    #[test]
    fn mae_against_mask_is_map_mae((p, g) in pair_strategy()) {
        let (pm, gm) = (to_map(&p), to_mask(&g));
        let direct = motionboost::metrics::map_mae(&pm, &gm.to_map()).unwrap();
        prop_assert!((direct - mae(&pm, &gm).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn consistency_is_s_measure_on_binarized_target((p, q) in pair_strategy().prop_flat_map(|(p, _)| {
        let h = p.len();
        let w = p[0].len();
        (Just(p), prop::collection::vec(prop::collection::vec(0.0f64..=1.0, w), h))
    })) {
        let target: Mask = q.iter().map(|r| r.iter().map(|&v| v >= 0.5).collect()).collect();
        let c = consistency_degree(&to_map(&p), &to_map(&q)).unwrap();
        prop_assert!((c - oracle_s(&p, &target)).abs() < 1e-12);
    }
}
