//! Undersampling masks and selection subsets.

mod common;

use proptest::prelude::*;
use ssrecon::kspace::{acs_start, SUBSET_FRACTION};
use ssrecon::{make_selection_subsets, make_undersampling_mask, Error, Mask};

fn rows_full(m: &Mask, start: usize, rows: usize) -> bool {
    let w = m.width();
    m.pattern().data()[start * w..(start + rows) * w].iter().all(|&v| v == 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn mask_invariants(seed in any::<u64>(), h in 16usize..48, w in 16usize..48, accel in prop::sample::select(vec![2.0, 3.0, 4.0, 8.0])) {
        let acs = 2;
        let m = make_undersampling_mask(h, w, accel, acs, seed).unwrap();
        let target = (h * w) as f64 / accel;
        prop_assert!((m.count() as f64 - target).abs() <= 0.02 * target);
        prop_assert!(rows_full(&m, acs_start(h, acs), acs));
        prop_assert!(m.acs_rows_full());
        prop_assert!(m.pattern().data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(&m, &make_undersampling_mask(h, w, accel, acs, seed).unwrap());
    }

    #[test]
    fn subset_invariants(seed in any::<u64>(), n in 24usize..48) {
        let parent = make_undersampling_mask(n, n, 4.0, 4, seed).unwrap();
        let pair = make_selection_subsets(&parent, 2, seed.wrapping_add(1)).unwrap();
        let pn = parent.count() as f64;
        for sub in [&pair.sub1, &pair.sub2] {
            prop_assert!(sub.is_subset_of(&parent));
            let f = sub.count() as f64 / pn;
            prop_assert!(f >= SUBSET_FRACTION.0 && f <= SUBSET_FRACTION.1, "fraction {f}");
            prop_assert!(rows_full(sub, acs_start(n, 2), 2));
        }
        prop_assert!(pair.sub1 != pair.sub2);
        prop_assert!(pair.overlap() <= pair.coverage());
        prop_assert!(pair.coverage() <= 1.0);
    }
}

#[test]
fn full_scale_masks() {
    let parent = make_undersampling_mask(256, 256, 4.0, 24, 3).unwrap();
    assert!((parent.count() as f64 - 16384.0).abs() <= 0.02 * 16384.0);
    assert!(rows_full(&parent, acs_start(256, 24), 24));
    let pair = make_selection_subsets(&parent, 16, 4).unwrap();
    for sub in [&pair.sub1, &pair.sub2] {
        assert!(sub.is_subset_of(&parent));
        let f = sub.count() as f64 / parent.count() as f64;
        assert!((0.4..=0.6).contains(&f));
        assert!(rows_full(sub, acs_start(256, 16), 16));
    }
    assert_eq!(pair, make_selection_subsets(&parent, 16, 4).unwrap());
}

#[test]
fn selection_band_lies_inside_the_acs_band() {
    for h in [16, 17, 255, 256] {
        let (a, s) = (acs_start(h, 24.min(h)), acs_start(h, 16));
        assert!(s >= a && s + 16 <= a + 24.min(h), "h = {h}");
    }
}

/// Frozen small-case counts guard against silent changes to the sampling
/// streams.
#[test]
fn golden_16x16() {
    let parent = make_undersampling_mask(16, 16, 4.0, 2, 11).unwrap();
    let pair = make_selection_subsets(&parent, 1, 12).unwrap();
    let counts = (parent.count(), pair.sub1.count(), pair.sub2.count());
    let union = (pair.coverage() * parent.count() as f64).round() as usize;
    assert_eq!((counts, union), GOLDEN_16);
}

const GOLDEN_16: ((usize, usize, usize), usize) = ((64, 30, 32), 42);

#[test]
fn infeasible_requests_are_errors() {
    // 24 full rows exceed the 4x budget of 8 rows at 32x32
    assert!(matches!(make_undersampling_mask(32, 32, 4.0, 24, 0), Err(Error::Mask(_))));
    assert!(matches!(make_undersampling_mask(32, 32, 0.5, 2, 0), Err(Error::Mask(_))));
    let parent = make_undersampling_mask(32, 32, 4.0, 4, 0).unwrap();
    assert!(make_selection_subsets(&parent, 6, 0).is_err());
}

#[test]
fn different_seeds_give_different_masks() {
    let a = make_undersampling_mask(64, 64, 4.0, 8, 1).unwrap();
    let b = make_undersampling_mask(64, 64, 4.0, 8, 2).unwrap();
    assert_ne!(a.pattern(), b.pattern());
}
