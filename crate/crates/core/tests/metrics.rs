mod common;

use avloc::metrics::{auc, binarize, box_mask, ciou, success_ratio, thresholds, EvalReport};
use common::metric_oracle::{self, set_iou};
use proptest::prelude::*;

#[test]
fn ciou_equals_set_iou_on_random_masks() {
    metric_oracle::ciou_equals_set_iou_on_random_masks(1000);
}

#[test]
fn auc_matches_closed_form_curves() {
    metric_oracle::auc_matches_closed_form_curves();
}

#[test]
fn ciou_examples() {
    let gt = box_mask([0.0, 0.0, 2.0, 2.0], 4);
    assert_eq!(gt.iter().filter(|&&g| g).count(), 4);
    assert_eq!(ciou(&gt, &gt).unwrap(), 1.0);
    let disjoint = box_mask([2.0, 2.0, 4.0, 4.0], 4);
    assert_eq!(ciou(&disjoint, &gt).unwrap(), 0.0);
    let wider = box_mask([0.0, 0.0, 4.0, 2.0], 4);
    assert_eq!(ciou(&wider, &gt).unwrap(), 0.5);
    assert!(ciou(&gt, &[false; 16]).is_err());
    assert!(ciou(&gt, &[true; 4]).is_err());
}

#[test]
fn binarize_is_inclusive_at_half() {
    assert!(binarize(&[0.5; 9]).iter().all(|&b| b));
    assert!(binarize(&[0.49; 9]).iter().all(|&b| !b));
    let checker: Vec<f32> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 0.2 } else { 0.8 }).collect();
    let expected: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 1).collect();
    assert_eq!(binarize(&checker), expected);
}

#[test]
fn box_mask_uses_pixel_centers() {
    // a left edge at 1.6 excludes pixel 1 (center 1.5); 2.6 includes pixel 2
    let m = box_mask([1.6, 0.0, 2.6, 1.0], 4);
    assert_eq!(&m[..4], &[false, false, true, false]);
    assert!(m[4..].iter().all(|&b| !b));
}

#[test]
fn grid_has_21_points() {
    let t = thresholds();
    assert_eq!(t.len(), 21);
    assert_eq!(t[0], 0.0);
    assert_eq!(t[20], 1.0);
    assert_eq!(t[10], 0.5);
}

#[test]
fn success_counts_at_half() {
    assert_eq!(success_ratio(&[0.4, 0.6], 0.5).unwrap(), 0.5);
    let r = EvalReport::from_cious(vec![0.4, 0.6]).unwrap();
    assert_eq!(r.ciou_at_half, 0.5);
    assert!(success_ratio(&[], 0.5).is_err());
    assert!(auc(&[1.0]).is_err());
}

#[test]
fn grid_points_count_exact_hits() {
    // 0.15 as a literal sits just below 3 * 0.05
    assert_eq!(success_ratio(&[0.15], thresholds()[3]).unwrap(), 1.0);
}

#[test]
fn csv_has_one_row_per_threshold_and_trailers() {
    let csv = EvalReport::from_cious(vec![0.3, 0.7]).unwrap().to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "tau,success");
    assert_eq!(lines.len(), 1 + 21 + 2);
    assert_eq!(lines[11], "0.50,0.500000");
    assert!(lines[22].starts_with("ciou_at_half,"));
    assert!(lines[23].starts_with("auc,"));
}

proptest! {
    #[test]
    fn curve_is_monotone_and_auc_bounded(cious in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let r = EvalReport::from_cious(cious).unwrap();
        for w in r.success.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(r.auc <= r.success[0] + 1e-12);
        prop_assert!(r.auc >= r.success[20] - 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.auc));
    }

    #[test]
    fn ciou_is_bounded(mask in prop::collection::vec(any::<bool>(), 100), mut gt in prop::collection::vec(any::<bool>(), 100)) {
        gt[0] = true;
        let c = ciou(&mask, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(c, set_iou(&mask, &gt, 10));
    }

    #[test]
    fn binarize_ignores_monotone_remaps_fixing_half(map in prop::collection::vec(0.0f32..=1.0, 1..50)) {
        // signed square root around 0.5: strictly increasing, fixes 0.5, and
        // never rounds a nonzero offset back onto 0.5
        let remap: Vec<f32> = map.iter().map(|&x| {
            let d = x - 0.5;
            0.5 + d.signum() * (d.abs() / 2.0).sqrt() * (d != 0.0) as u8 as f32
        }).collect();
        prop_assert_eq!(binarize(&map), binarize(&remap));
    }
}
