use proptest::prelude::*;

use freeseg::eval::{EvalAccumulator, IGNORE_INDEX};

/// Per-class pixel counting with exact rational results, as (numerator,
/// denominator) pairs.
fn brute_force(gt: &[u16], pred: &[u16], l: usize) -> (Vec<Option<(u64, u64)>>, (u64, u64)) {
    let mut ious = Vec::new();
    for c in 0..l as u16 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&g, &p) in gt.iter().zip(pred) {
            if g == IGNORE_INDEX {
                continue;
            }
            match (g == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        ious.push((tp + fp + fn_ > 0).then_some((tp, tp + fp + fn_)));
    }
    let scored = gt.iter().filter(|&&g| g != IGNORE_INDEX).count() as u64;
    let correct = gt.iter().zip(pred).filter(|(&g, &p)| g != IGNORE_INDEX && g == p).count() as u64;
    (ious, (correct, scored))
}

prop_compose! {
    fn pair()(l in 1usize..=21, n in 1usize..=64 * 64)
        (gt in prop::collection::vec(prop_oneof![4 => 0..l as u16, 1 => Just(IGNORE_INDEX)], n),
         pred in prop::collection::vec(0..l as u16, n), l in Just(l))
        -> (Vec<u16>, Vec<u16>, usize)
    {
        (gt, pred, l)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_per_pixel_count((gt, pred, l) in pair()) {
        let mut acc = EvalAccumulator::new(l);
        acc.update_pixels(&gt, &pred).unwrap();
        let (ious, (correct, scored)) = brute_force(&gt, &pred, l);
        prop_assert_eq!(acc.total(), scored);
        for (c, iou) in ious.iter().enumerate() {
            prop_assert_eq!(acc.per_class_iou()[c], iou.map(|(n, d)| n as f64 / d as f64));
        }
        if scored == 0 {
            prop_assert!(acc.miou().is_err());
        } else {
            let present: Vec<f64> = ious.iter().flatten().map(|&(n, d)| n as f64 / d as f64).collect();
            prop_assert_eq!(acc.miou().unwrap(), present.iter().sum::<f64>() / present.len() as f64);
            prop_assert_eq!(acc.pixel_accuracy().unwrap(), correct as f64 / scored as f64);
        }
    }

    #[test]
    fn pixel_order_and_batching_do_not_matter((gt, pred, l) in pair(), split in any::<prop::sample::Index>()) {
        let mut whole = EvalAccumulator::new(l);
        whole.update_pixels(&gt, &pred).unwrap();
        let mut reversed = EvalAccumulator::new(l);
        let rg: Vec<u16> = gt.iter().rev().copied().collect();
        let rp: Vec<u16> = pred.iter().rev().copied().collect();
        reversed.update_pixels(&rg, &rp).unwrap();
        prop_assert_eq!(&whole, &reversed);
        let at = split.index(gt.len() + 1);
        let mut a = EvalAccumulator::new(l);
        a.update_pixels(&gt[..at], &pred[..at]).unwrap();
        let mut b = EvalAccumulator::new(l);
        b.update_pixels(&gt[at..], &pred[at..]).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        a.merge(&b).unwrap();
        prop_assert_eq!(&a, &whole);
        prop_assert_eq!(&ba, &whole);
    }
}
