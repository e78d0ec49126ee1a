mod common;

use proptest::prelude::*;

use common::{bb, dims};
use seg_agent::eval::{compute_metrics, mask_iou, Scenario};
use seg_agent::geometry::{consensus_nms, forward_box, inverse_box, iou, Augmentation, BBox, SourcedBox};
use seg_agent::imaging::BinaryMask;

fn real_box(limit: f64) -> impl Strategy<Value = BBox> {
    (0.0..limit - 1.0, 0.0..limit - 1.0, 0.5..limit, 0.5..limit)
        .prop_map(move |(x, y, w, h)| bb([x, y, (x + w).min(limit), (y + h).min(limit)]))
}

fn augmentation() -> impl Strategy<Value = Augmentation> {
    prop_oneof![
        Just(Augmentation::Identity),
        Just(Augmentation::HorizontalFlip),
        (0.25f64..=4.0).prop_map(|f| Augmentation::scale(f).unwrap()),
    ]
}

fn mask(side: u32) -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(0u8..=1, (side * side) as usize)
        .prop_map(move |bits| BinaryMask::from_bits(dims(side, side), bits).unwrap())
}

fn scenario() -> impl Strategy<Value = Scenario> {
    prop_oneof![Just(Scenario::Ess), Just(Scenario::Gos), Just(Scenario::Rgs)]
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in real_box(200.0), b in real_box(200.0)) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn augmentations_round_trip(aug in augmentation(), b in real_box(640.0)) {
        let d = dims(640, 640);
        let back = inverse_box(aug, &forward_box(aug, &b, d), d);
        for (p, q) in back.to_array().iter().zip(b.to_array()) {
            prop_assert!((p - q).abs() <= 1e-6, "{} vs {}", back, b);
        }
    }

    #[test]
    fn nms_survivors_respect_threshold(
        boxes in proptest::collection::vec(real_box(64.0), 1..10),
        theta in 0.05f64..=1.0,
    ) {
        let cands: Vec<SourcedBox> = boxes.iter().enumerate().map(|(i, b)| SourcedBox { bbox: *b, source_index: i }).collect();
        let kept = consensus_nms(&cands, theta).unwrap();
        prop_assert!(!kept.is_empty());
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) <= theta);
            }
        }
        let again = consensus_nms(&cands, theta).unwrap();
        prop_assert_eq!(
            kept.iter().map(|c| c.source_index).collect::<Vec<_>>(),
            again.iter().map(|c| c.source_index).collect::<Vec<_>>()
        );
    }

    #[test]
    fn nms_ignores_input_order(boxes in proptest::collection::vec(real_box(64.0), 1..8), rot in 0usize..8) {
        let cands: Vec<SourcedBox> = boxes.iter().enumerate().map(|(i, b)| SourcedBox { bbox: *b, source_index: i }).collect();
        let mut rotated = cands.clone();
        rotated.rotate_left(rot % cands.len());
        let ids = |v: &[SourcedBox]| consensus_nms(v, 0.8).unwrap().iter().map(|c| c.source_index).collect::<Vec<_>>();
        prop_assert_eq!(ids(&cands), ids(&rotated));
    }

    #[test]
    fn mask_iou_is_symmetric(a in mask(8), b in mask(8)) {
        let (ab, ba) = (mask_iou(&a, &b).unwrap(), mask_iou(&b, &a).unwrap());
        prop_assert_eq!(ab.intersection, ba.intersection);
        prop_assert_eq!(ab.union, ba.union);
        prop_assert!(ab.intersection <= ab.union);
    }

    #[test]
    fn metrics_bounded_and_order_free(
        rows in proptest::collection::vec((mask(6), mask(6), scenario()), 1..12),
        rot in 0usize..12,
    ) {
        let report = compute_metrics(&rows).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.giou()));
        prop_assert!((0.0..=1.0).contains(&report.ciou()));
        let mut shuffled = rows.clone();
        shuffled.rotate_left(rot % rows.len());
        let other = compute_metrics(&shuffled).unwrap();
        prop_assert_eq!(report.giou().to_bits(), other.giou().to_bits());
        prop_assert_eq!(report.ciou().to_bits(), other.ciou().to_bits());
    }
}
