//! Property tests over the library's algebraic invariants.

use headfuse_core::fusion::{fuse_cls_max, fuse_reg_mean, late_fuse};
use headfuse_core::geometry::{nms, rotated_iou, Box3D, Pose2D};
use headfuse_core::heads::{ClassificationMap, RegressionMap};
use headfuse_core::tensor::{conv2d, scaled_dot_attention_with_weights, ConvParams, GridMap};
use headfuse_core::wire::Codec;
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = Box3D> {
    (
        -20.0..20.0f64,
        -20.0..20.0f64,
        1.0..5.0f64,
        1.0..3.0f64,
        -3.2..3.2f64,
        0.0..=1.0f64,
    )
        .prop_map(|(x, y, l, w, yaw, score)| {
            Box3D::new(x, y, 0.0, l, w, 1.5, yaw, score).unwrap()
        })
}

fn arb_pose() -> impl Strategy<Value = Pose2D> {
    (-30.0..30.0f64, -30.0..30.0f64, -3.2..3.2f64).prop_map(|(x, y, yaw)| Pose2D::new(x, y, yaw))
}

proptest! {
    #[test]
    fn iou_symmetric_self_unit_and_rigid_invariant(a in arb_box(), b in arb_box(), frame in arb_pose()) {
        let ab = rotated_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - rotated_iou(&b, &a)).abs() < 1e-9);
        prop_assert!((rotated_iou(&a, &a) - 1.0).abs() < 1e-9);
        let moved = rotated_iou(&a.to_world(&frame), &b.to_world(&frame));
        prop_assert!((ab - moved).abs() < 1e-9);
    }

    #[test]
    fn nms_output_is_valid_subset(boxes in prop::collection::vec(arb_box(), 0..12), threshold in 0.05..0.9f64) {
        let kept = nms(&boxes, threshold);
        prop_assert!(kept.len() <= boxes.len());
        for k in &kept {
            prop_assert!(boxes.contains(k));
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                prop_assert!(rotated_iou(&kept[i], &kept[j]) < threshold);
            }
        }
    }

    #[test]
    fn late_fuse_respects_threshold_and_degenerates(
        ego in prop::collection::vec(arb_box(), 0..6),
        recv in prop::collection::vec(arb_box(), 0..6),
        threshold in 0.0..=1.0f64,
    ) {
        let fused = late_fuse(&ego, &recv, threshold, 0.15);
        // no received box below the threshold may appear
        for f in &fused {
            let from_recv_below = recv.iter().any(|r| r == f && r.score < threshold) && !ego.contains(f);
            prop_assert!(!from_recv_below);
        }
        // above-unit threshold means ego-only output
        let solo = late_fuse(&ego, &recv, 1.0 + 1e-9, 0.15);
        prop_assert_eq!(solo, nms(&ego, 0.15));
    }

    #[test]
    fn attention_weights_and_hull(
        n in 1usize..6,
        d in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = headfuse_core::rng::DetRng::new(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.range_f64(-40.0, 40.0)).collect();
        let (out, w) = scaled_dot_attention_with_weights(&x, n, d);
        for i in 0..n {
            let sum: f64 = w[i * n..(i + 1) * n].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            for j in 0..d {
                let lo = (0..n).map(|r| x[r * d + j]).fold(f64::INFINITY, f64::min);
                let hi = (0..n).map(|r| x[r * d + j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[i * d + j] >= lo - 1e-9);
                prop_assert!(out[i * d + j] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn conv_linearity_without_bias(seed in any::<u64>(), alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let mut rng = headfuse_core::rng::DetRng::new(seed);
        let (c, h, w) = (2, 4, 4);
        let vals = |rng: &mut headfuse_core::rng::DetRng| -> Vec<f64> {
            (0..c * h * w).map(|_| rng.range_f64(-1.0, 1.0)).collect()
        };
        let x = GridMap::from_values(c, h, w, vals(&mut rng)).unwrap();
        let y = GridMap::from_values(c, h, w, vals(&mut rng)).unwrap();
        let weights = (0..2 * c * 9).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let p = ConvParams::new(3, c, 2, weights, vec![0.0; 2]).unwrap();
        let mixed_vals: Vec<f64> = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let mixed = GridMap::from_values(c, h, w, mixed_vals).unwrap();
        let lhs = conv2d(&mixed, &p).unwrap();
        let cx = conv2d(&x, &p).unwrap();
        let cy = conv2d(&y, &p).unwrap();
        for i in 0..lhs.values().len() {
            let rhs = alpha * cx.values()[i] + beta * cy.values()[i];
            prop_assert!((lhs.values()[i] - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn max_mean_fusion_algebra(seed in any::<u64>()) {
        let mut rng = headfuse_core::rng::DetRng::new(seed);
        let (h, w) = (3, 4);
        let cls = |rng: &mut headfuse_core::rng::DetRng| {
            let v: Vec<f64> = (0..2 * h * w).map(|_| rng.next_f64()).collect();
            ClassificationMap::from_grid(GridMap::from_values(2, h, w, v).unwrap()).unwrap()
        };
        let reg = |rng: &mut headfuse_core::rng::DetRng| {
            let v: Vec<f64> = (0..14 * h * w).map(|_| rng.range_f64(-1.0, 1.0)).collect();
            RegressionMap::from_grid(GridMap::from_values(14, h, w, v).unwrap()).unwrap()
        };
        let (a, b) = (cls(&mut rng), cls(&mut rng));
        let ab = fuse_cls_max(&a, &b).unwrap();
        let ba = fuse_cls_max(&b, &a).unwrap();
        prop_assert_eq!(ab.as_grid().values(), ba.as_grid().values());
        let aa = fuse_cls_max(&a, &a).unwrap();
        prop_assert_eq!(aa.as_grid().values(), a.as_grid().values());
        // associativity over three maps
        let c = cls(&mut rng);
        let left = fuse_cls_max(&fuse_cls_max(&a, &b).unwrap(), &c).unwrap();
        let right = fuse_cls_max(&a, &fuse_cls_max(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(left.as_grid().values(), right.as_grid().values());

        let (ra, rb) = (reg(&mut rng), reg(&mut rng));
        let rab = fuse_reg_mean(&ra, &rb).unwrap();
        let rba = fuse_reg_mean(&rb, &ra).unwrap();
        prop_assert_eq!(rab.as_grid().values(), rba.as_grid().values());
        for i in 0..rab.as_grid().values().len() {
            let (x, y) = (ra.as_grid().values()[i], rb.as_grid().values()[i]);
            prop_assert!(rab.as_grid().values()[i] >= x.min(y));
            prop_assert!(rab.as_grid().values()[i] <= x.max(y));
        }
    }

    #[test]
    fn compression_round_trips_arbitrary_bytes(data in prop::collection::vec(any::<u8>(), 0..4096)) {
        for codec in [Codec::PassThrough, Codec::Deflate] {
            let packed = codec.compress(&data);
            prop_assert_eq!(codec.decompress(&packed).unwrap(), data.clone());
        }
    }
}
