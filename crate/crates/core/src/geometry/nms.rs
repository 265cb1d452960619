//! Greedy non-maximum suppression over rotated BEV boxes.

use super::{rotated_iou, Box3D};
use std::cmp::Ordering;

/// Sort key: descending score, ties broken by ascending (x, y, yaw) so the
/// result is deterministic.
fn det_order(a: &Box3D, b: &Box3D) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.x.partial_cmp(&b.x).unwrap_or(Ordering::Equal))
        .then_with(|| a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
        .then_with(|| a.yaw.partial_cmp(&b.yaw).unwrap_or(Ordering::Equal))
}

/// Keep a box iff its IoU with every already-kept box is strictly below
/// `iou_threshold`.
pub fn nms(boxes: &[Box3D], iou_threshold: f64) -> Vec<Box3D> {
    let mut sorted: Vec<Box3D> = boxes.to_vec();
    sorted.sort_by(det_order);
    let mut kept: Vec<Box3D> = Vec::new();
    for b in sorted {
        if kept.iter().all(|k| rotated_iou(k, &b) < iou_threshold) {
            kept.push(b);
        }
    }
    kept
}
