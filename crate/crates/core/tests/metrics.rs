//! Evaluation metrics against hand counts, exhaustive oracles and their
//! algebraic properties.

mod common;

use cotrack::geometry::BBox;
use cotrack::metrics::{clear_mot, id_counts, idf1, merge_profiles, occlusion_profile, EvalResult};
use cotrack::motio::{GtRecord, ResultRecord};
use proptest::prelude::*;

fn b(left: f64) -> BBox {
    BBox { left, top: 0.0, width: 20.0, height: 30.0 }
}

fn gt(frame: u32, id: i64, bbox: BBox, visibility: f64) -> GtRecord {
    GtRecord { frame, id, bbox, conf: 1.0, class: 1, visibility }
}

fn hyp(frame: u32, id: u32, bbox: BBox) -> ResultRecord {
    ResultRecord { frame, id, bbox, conf: 1.0 }
}

#[test]
fn hand_counted_examples() {
    let track = [gt(1, 1, b(0.0), 1.0), gt(2, 1, b(5.0), 1.0)];
    let r = clear_mot(&track, &[hyp(1, 7, b(0.0)), hyp(2, 7, b(5.0))], 0.5).unwrap();
    assert_eq!((r.mota, r.fp, r.fn_, r.ids), (1.0, 0, 0, 0));

    let r = clear_mot(&track, &[hyp(1, 7, b(0.0))], 0.5).unwrap();
    assert_eq!((r.fn_, r.mota), (1, 0.5));

    let r = clear_mot(&track, &[hyp(1, 7, b(0.0)), hyp(2, 8, b(5.0))], 0.5).unwrap();
    assert_eq!((r.ids, r.mota), (1, 0.5));

    let four: Vec<GtRecord> = (1..=4).map(|f| gt(f, 1, b(0.0), 1.0)).collect();
    let split: Vec<ResultRecord> = (1..=4).map(|f| hyp(f, if f <= 2 { 1 } else { 2 }, b(0.0))).collect();
    assert_eq!(idf1(&four, &split, 0.5).unwrap(), 0.5);
    assert_eq!(idf1(&four, &[], 0.5).unwrap(), 0.0);
}

#[test]
fn hyp_beyond_gt_range_counts_as_false_positive() {
    let r = clear_mot(&[gt(1, 1, b(0.0), 1.0)], &[hyp(1, 1, b(0.0)), hyp(9, 1, b(0.0))], 0.5).unwrap();
    assert_eq!((r.fp, r.fn_, r.gt_count), (1, 0, 1));
}

#[test]
fn occlusion_examples() {
    let visible: Vec<GtRecord> = (1..=3).map(|f| gt(f, 1, b(f as f64), 1.0)).collect();
    let same: Vec<ResultRecord> = visible.iter().map(|g| hyp(g.frame, 1, g.bbox)).collect();
    let p = occlusion_profile(&visible, &same);
    assert_eq!(p[0].fraction(), Some(1.0));
    assert!(p[1..].iter().all(|bin| bin.occurrences == 0 && bin.fraction().is_none()));

    let p = occlusion_profile(&[gt(1, 1, b(0.0), 0.05)], &[hyp(1, 1, b(100.0))]);
    assert_eq!((p[9].occurrences, p[9].fraction()), (1, Some(0.0)));
}

#[test]
fn fuzzed_instances_exercise_every_error_kind() {
    let (mut fp, mut fn_, mut ids) = (0, 0, 0);
    for seed in 0..200 {
        let (g, h) = common::fuzz_instance(seed, 5, 4);
        let r = clear_mot(&g, &h, 0.5).unwrap();
        fp += usize::from(r.fp > 0);
        fn_ += usize::from(r.fn_ > 0);
        ids += usize::from(r.ids > 0);
    }
    assert!(fp >= 20 && fn_ >= 20 && ids >= 10, "{fp} {fn_} {ids}");
}

#[test]
fn merged_sequences_sum_counts() {
    let (g1, h1) = common::fuzz_instance(1, 5, 4);
    let (g2, h2) = common::fuzz_instance(2, 5, 4);
    let (r1, r2) = (clear_mot(&g1, &h1, 0.5).unwrap(), clear_mot(&g2, &h2, 0.5).unwrap());
    let (c1, c2) = (id_counts(&g1, &h1, 0.5).unwrap(), id_counts(&g2, &h2, 0.5).unwrap());
    let m = EvalResult::merge(&[r1, r2], c1.0 + c2.0, c1.2 + c2.2);
    assert_eq!(m.fp, r1.fp + r2.fp);
    assert_eq!(m.gt_count, r1.gt_count + r2.gt_count);
    let expected = 1.0 - (m.fn_ + m.fp + m.ids) as f64 / m.gt_count as f64;
    assert_eq!(m.mota, expected);
    let p = merge_profiles(&[occlusion_profile(&g1, &h1), occlusion_profile(&g2, &h2)]);
    assert_eq!(p.iter().map(|bin| bin.occurrences).sum::<usize>(), g1.len() + g2.len());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn mota_identity_and_idf1_range(seed in 1000u64..1_000_000) {
        let (g, h) = common::fuzz_instance(seed, 8, 6);
        let r = clear_mot(&g, &h, 0.5).unwrap();
        let expected = 1.0 - (r.fn_ + r.fp + r.ids) as f64 / r.gt_count as f64;
        if r.gt_count > 0 {
            prop_assert_eq!(r.mota, expected);
        }
        prop_assert_eq!(r.matches + r.fn_, r.gt_count);
        let f = idf1(&g, &h, 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn bins_cover_every_gt_box(seed in 1000u64..1_000_000) {
        let (g, h) = common::fuzz_instance(seed, 8, 6);
        let p = occlusion_profile(&g, &h);
        prop_assert_eq!(p.len(), 10);
        prop_assert_eq!(p.iter().map(|bin| bin.occurrences).sum::<usize>(), g.len());
        prop_assert!(p.iter().all(|bin| bin.tracked <= bin.occurrences));
    }

    #[test]
    fn small_instances_match_the_oracles(seed in 1000u64..1_000_000) {
        let (g, h) = common::fuzz_instance(seed, 5, 4);
        let r = clear_mot(&g, &h, 0.5).unwrap();
        prop_assert_eq!((r.fp, r.fn_, r.ids, r.gt_count), common::brute_clear(&g, &h, 0.5));
        prop_assert_eq!(idf1(&g, &h, 0.5).unwrap(), common::brute_idf1(&g, &h, 0.5));
    }

    #[test]
    fn a_correct_box_never_lowers_idtp(seed in 1000u64..1_000_000, pick in any::<prop::sample::Index>()) {
        let (g, h) = common::fuzz_instance(seed, 5, 4);
        let counted: Vec<&GtRecord> = g.iter().filter(|r| r.conf != 0.0).collect();
        prop_assume!(!counted.is_empty());
        let target = counted[pick.index(counted.len())];
        let before = id_counts(&g, &h, 0.5).unwrap().0;
        let mut more = h.clone();
        more.push(hyp(target.frame, 99, target.bbox));
        prop_assert!(id_counts(&g, &more, 0.5).unwrap().0 >= before);
    }
}
