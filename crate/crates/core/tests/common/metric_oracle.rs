//! Metric oracle: set-based IoU and closed-form AUC curves.

use std::collections::BTreeSet;

use avloc::metrics::{ciou, EvalReport};
use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;

/// Set-based IoU: pixels as coordinate sets.
pub fn set_iou(mask: &[bool], gt: &[bool], side: usize) -> f64 {
    let to_set = |m: &[bool]| -> BTreeSet<(usize, usize)> {
        (0..side * side).filter(|&i| m[i]).map(|i| (i / side, i % side)).collect()
    };
    let (a, b) = (to_set(mask), to_set(gt));
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    inter as f64 / union as f64
}

/// Per-sample cIoU against the set oracle on `count` random 10x10 pairs.
pub fn ciou_equals_set_iou_on_random_masks(count: usize) {
    let mut rng = XorShiftRng::seed_from_u64(11);
    let mut checked = 0;
    while checked < count {
        let density = rng.random_range(0.05..0.95);
        let mask: Vec<bool> = (0..100).map(|_| rng.random_bool(density)).collect();
        let gt: Vec<bool> = (0..100).map(|_| rng.random_bool(density)).collect();
        if !gt.iter().any(|&g| g) {
            continue;
        }
        assert_eq!(ciou(&mask, &gt).unwrap(), set_iou(&mask, &gt, 10));
        checked += 1;
    }
}

/// AUC against the hand trapezoid on the two closed-form curves: all
/// scores perfect (area 1) and all scores zero (one trapezoid, 0.025).
pub fn auc_matches_closed_form_curves() {
    let r = EvalReport::from_cious(vec![1.0; 7]).unwrap();
    assert!(r.success.iter().all(|&s| s == 1.0));
    assert!((r.auc - 1.0).abs() < 1e-12);
    let r = EvalReport::from_cious(vec![0.0; 5]).unwrap();
    assert_eq!(r.success[0], 1.0);
    assert!(r.success[1..].iter().all(|&s| s == 0.0));
    // hand trapezoid: (1 + 0) / 2 * 0.05
    assert!((r.auc - 0.025).abs() < 1e-12);
}
