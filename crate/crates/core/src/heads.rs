//! Anchor-based detection head maps: encoding ground-truth boxes into
//! classification/regression grids and decoding them back to scored boxes.
//!
//! Regression channels are anchor-major, seven targets per anchor:
//! (dx, dy, dz, dl, dw, dh, dyaw). Offsets follow the usual anchor
//! parameterization: centers normalized by the anchor diagonal, dims by
//! log ratio, yaw by direct difference wrapped to (-pi/2, pi/2] since a
//! box footprint is symmetric under a half-turn.

use crate::error::{CoreError, Result};
use crate::geometry::{nms, rotated_iou, BEVGridSpec, Box3D};
use crate::tensor::GridMap;
use serde::{Deserialize, Serialize};

pub const REG_TARGETS: usize = 7;

/// Per-cell anchor template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorTemplate {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub z_center: f64,
}

impl AnchorTemplate {
    /// Normalization diagonal for center offsets.
    pub fn diagonal(&self) -> f64 {
        (self.length * self.length + self.width * self.width).sqrt()
    }

    /// The template box placed at a cell center.
    pub fn at(&self, x: f64, y: f64, score: f64) -> Box3D {
        Box3D {
            x,
            y,
            z: self.z_center,
            length: self.length,
            width: self.width,
            height: self.height,
            yaw: self.yaw,
            score,
        }
    }
}

/// Anchor layout over a BEV grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub grid: BEVGridSpec,
    pub templates: Vec<AnchorTemplate>,
}

impl AnchorGrid {
    pub fn new(grid: BEVGridSpec, templates: Vec<AnchorTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(CoreError::rejected("at least one anchor template required"));
        }
        if templates
            .iter()
            .any(|t| t.length <= 0.0 || t.width <= 0.0 || t.height <= 0.0)
        {
            return Err(CoreError::rejected("anchor dimensions must be positive"));
        }
        grid.validate()?;
        Ok(AnchorGrid { grid, templates })
    }

    /// The default single-class vehicle layout: two yaw templates per cell,
    /// giving 2 classification + 14 regression = 16 head channels.
    pub fn default_vehicle(grid: BEVGridSpec) -> Self {
        let base = |yaw: f64| AnchorTemplate {
            length: 3.9,
            width: 1.6,
            height: 1.56,
            yaw,
            z_center: 0.0,
        };
        AnchorGrid {
            grid,
            templates: vec![base(0.0), base(std::f64::consts::FRAC_PI_2)],
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.templates.len()
    }

    pub fn cls_channels(&self) -> usize {
        self.templates.len()
    }

    pub fn reg_channels(&self) -> usize {
        REG_TARGETS * self.templates.len()
    }

    /// Total head channels (classification + regression).
    pub fn head_channels(&self) -> usize {
        self.cls_channels() + self.reg_channels()
    }
}

/// Post-sigmoid objectness scores, one channel per anchor template.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMap {
    grid: GridMap,
}

impl ClassificationMap {
    pub fn from_grid(grid: GridMap) -> Result<Self> {
        let hw = grid.height() * grid.width();
        for c in 0..grid.channels() {
            for i in 0..hw {
                let (r, col) = (i / grid.width(), i % grid.width());
                if grid.is_valid(r, col) {
                    let v = grid.value(c, r, col);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(CoreError::rejected(format!(
                            "classification score {v} outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(ClassificationMap { grid })
    }

    pub fn zeros(anchors: usize, height: usize, width: usize) -> Self {
        ClassificationMap {
            grid: GridMap::zeros(anchors, height, width),
        }
    }

    pub fn as_grid(&self) -> &GridMap {
        &self.grid
    }

    pub fn into_grid(self) -> GridMap {
        self.grid
    }

    pub fn anchors(&self) -> usize {
        self.grid.channels()
    }
}

/// Box-offset targets, `REG_TARGETS` channels per anchor template.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionMap {
    grid: GridMap,
}

impl RegressionMap {
    pub fn from_grid(grid: GridMap) -> Result<Self> {
        if !grid.channels().is_multiple_of(REG_TARGETS) {
            return Err(CoreError::rejected(format!(
                "regression map channels {} not a multiple of {REG_TARGETS}",
                grid.channels()
            )));
        }
        if !grid.all_finite() {
            return Err(CoreError::rejected("non-finite regression value"));
        }
        Ok(RegressionMap { grid })
    }

    pub fn zeros(anchors: usize, height: usize, width: usize) -> Self {
        RegressionMap {
            grid: GridMap::zeros(REG_TARGETS * anchors, height, width),
        }
    }

    pub fn as_grid(&self) -> &GridMap {
        &self.grid
    }

    pub fn into_grid(self) -> GridMap {
        self.grid
    }

    pub fn anchors(&self) -> usize {
        self.grid.channels() / REG_TARGETS
    }
}

/// Where a ground-truth box landed in the head maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub box_index: usize,
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
}

/// Output of `encode_gt`.
#[derive(Debug, Clone)]
pub struct EncodeResult {
    pub cls: ClassificationMap,
    pub reg: RegressionMap,
    /// Boxes whose center fell outside the grid extent.
    pub skipped_outside: usize,
    pub assignments: Vec<Assignment>,
}

/// Wrap an angle difference to (-pi/2, pi/2] (footprint half-turn symmetry).
fn wrap_half_turn(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut a = a.rem_euclid(pi);
    if a > pi / 2.0 {
        a -= pi;
    }
    a
}

/// Encode ground-truth boxes into head maps. Each box activates the best
/// IoU-matching anchor of the cell containing its center; all other cells
/// stay zero. Boxes outside the grid are skipped and counted.
pub fn encode_gt(boxes: &[Box3D], anchors: &AnchorGrid) -> EncodeResult {
    let (h, w) = (anchors.grid.height(), anchors.grid.width());
    let a = anchors.anchors_per_cell();
    let mut cls = GridMap::zeros(a, h, w);
    let mut reg = GridMap::zeros(REG_TARGETS * a, h, w);
    let mut skipped = 0usize;
    let mut assignments = Vec::with_capacity(boxes.len());

    for (bi, b) in boxes.iter().enumerate() {
        let Some((row, col)) = anchors.grid.cell_of(b.x, b.y) else {
            skipped += 1;
            continue;
        };
        let (ax, ay) = anchors.grid.cell_center(row, col);
        // best anchor by BEV IoU with the template placed at the cell center
        let mut best = 0usize;
        let mut best_iou = -1.0;
        for (ti, t) in anchors.templates.iter().enumerate() {
            let iou = rotated_iou(&t.at(ax, ay, 1.0), b);
            if iou > best_iou {
                best_iou = iou;
                best = ti;
            }
        }
        let t = &anchors.templates[best];
        let d = t.diagonal();
        let targets = [
            (b.x - ax) / d,
            (b.y - ay) / d,
            (b.z - t.z_center) / t.height,
            (b.length / t.length).ln(),
            (b.width / t.width).ln(),
            (b.height / t.height).ln(),
            wrap_half_turn(b.yaw - t.yaw),
        ];
        cls.set(best, row, col, 1.0);
        for (k, v) in targets.iter().enumerate() {
            reg.set(best * REG_TARGETS + k, row, col, *v);
        }
        assignments.push(Assignment {
            box_index: bi,
            row,
            col,
            anchor: best,
        });
    }

    EncodeResult {
        cls: ClassificationMap { grid: cls },
        reg: RegressionMap { grid: reg },
        skipped_outside: skipped,
        assignments,
    }
}

/// Decode head maps into scored boxes: every anchor cell with score at or
/// above `score_threshold` produces a box, then NMS deduplicates.
///
/// Only cells marked valid in the classification map are decoded.
pub fn decode(
    cls: &ClassificationMap,
    reg: &RegressionMap,
    anchors: &AnchorGrid,
    score_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Box3D>> {
    let cg = cls.as_grid();
    let rg = reg.as_grid();
    let (h, w) = (anchors.grid.height(), anchors.grid.width());
    let a = anchors.anchors_per_cell();
    if cg.height() != h || cg.width() != w || cg.channels() != a {
        return Err(CoreError::rejected("classification map shape mismatch"));
    }
    if rg.height() != h || rg.width() != w || rg.channels() != REG_TARGETS * a {
        return Err(CoreError::rejected("regression map shape mismatch"));
    }

    let mut candidates = Vec::new();
    for row in 0..h {
        for col in 0..w {
            if !cg.is_valid(row, col) {
                continue;
            }
            for (ti, t) in anchors.templates.iter().enumerate() {
                let score = cg.value(ti, row, col);
                if score < score_threshold {
                    continue;
                }
                let (ax, ay) = anchors.grid.cell_center(row, col);
                let d = t.diagonal();
                let get = |k: usize| rg.value(ti * REG_TARGETS + k, row, col);
                candidates.push(Box3D {
                    x: ax + get(0) * d,
                    y: ay + get(1) * d,
                    z: t.z_center + get(2) * t.height,
                    length: t.length * get(3).exp(),
                    width: t.width * get(4).exp(),
                    height: t.height * get(5).exp(),
                    yaw: t.yaw + get(6),
                    score,
                });
            }
        }
    }
    Ok(nms(&candidates, nms_iou))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn test_anchors() -> AnchorGrid {
        let grid = BEVGridSpec::new(-20.0, 20.0, -20.0, 20.0, 0.5).unwrap();
        AnchorGrid::default_vehicle(grid)
    }

    fn random_box(rng: &mut DetRng) -> Box3D {
        Box3D {
            x: rng.range_f64(-18.0, 18.0),
            y: rng.range_f64(-18.0, 18.0),
            z: rng.range_f64(-0.5, 0.5),
            length: rng.range_f64(3.6, 4.8),
            width: rng.range_f64(1.5, 2.0),
            height: rng.range_f64(1.4, 1.8),
            yaw: rng.range_f64(-PI, PI),
            score: 1.0,
        }
    }

    #[test]
    fn head_channel_arithmetic() {
        let a = test_anchors();
        assert_eq!(a.anchors_per_cell(), 2);
        assert_eq!(a.cls_channels(), 2);
        assert_eq!(a.reg_channels(), 14);
        assert_eq!(a.head_channels(), 16);
    }

    #[test]
    fn empty_boxes_encode_to_zero_maps() {
        let a = test_anchors();
        let enc = encode_gt(&[], &a);
        assert!(enc.cls.as_grid().values().iter().all(|v| *v == 0.0));
        assert!(enc.reg.as_grid().values().iter().all(|v| *v == 0.0));
        assert_eq!(enc.skipped_outside, 0);
        assert!(enc.assignments.is_empty());
    }

    #[test]
    fn box_on_anchor_template_encodes_to_zero_offsets() {
        let a = test_anchors();
        let (cx, cy) = a.grid.cell_center(10, 12);
        let b = a.templates[0].at(cx, cy, 1.0);
        let enc = encode_gt(&[b], &a);
        assert_eq!(enc.cls.as_grid().value(0, 10, 12), 1.0);
        for k in 0..REG_TARGETS {
            assert_eq!(enc.reg.as_grid().value(k, 10, 12), 0.0);
        }
    }

    #[test]
    fn outside_box_skipped_with_count() {
        let a = test_anchors();
        let mut b = random_box(&mut DetRng::new(1));
        b.x = 500.0;
        let enc = encode_gt(&[b], &a);
        assert_eq!(enc.skipped_outside, 1);
        assert!(enc.assignments.is_empty());
    }

    #[test]
    fn decode_empty_map_is_empty() {
        let a = test_anchors();
        let cls = ClassificationMap::zeros(2, a.grid.height(), a.grid.width());
        let reg = RegressionMap::zeros(2, a.grid.height(), a.grid.width());
        let out = decode(&cls, &reg, &a, 0.1, 0.15).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn decode_single_anchor_recovers_template() {
        let a = test_anchors();
        let (h, w) = (a.grid.height(), a.grid.width());
        let mut cls = GridMap::zeros(2, h, w);
        cls.set(1, 7, 9, 1.0);
        let cls = ClassificationMap::from_grid(cls).unwrap();
        let reg = RegressionMap::zeros(2, h, w);
        let out = decode(&cls, &reg, &a, 0.5, 0.15).unwrap();
        assert_eq!(out.len(), 1);
        let (ax, ay) = a.grid.cell_center(7, 9);
        let expect = a.templates[1].at(ax, ay, 1.0);
        assert_eq!(out[0], expect);
    }

    #[test]
    fn decode_shape_mismatch_rejected() {
        let a = test_anchors();
        let cls = ClassificationMap::zeros(2, 4, 4);
        let reg = RegressionMap::zeros(2, a.grid.height(), a.grid.width());
        assert!(decode(&cls, &reg, &a, 0.5, 0.15).is_err());
    }

    /// Boxes separated enough to avoid NMS merging round-trip exactly.
    #[test]
    fn encode_decode_round_trip() {
        let a = test_anchors();
        for seed in 0..20u64 {
            let mut rng = DetRng::new(seed);
            let mut boxes: Vec<Box3D> = Vec::new();
            while boxes.len() < 5 {
                let b = random_box(&mut rng);
                if boxes.iter().all(|o| rotated_iou(o, &b) < 0.01) {
                    boxes.push(b);
                }
            }
            let enc = encode_gt(&boxes, &a);
            assert_eq!(enc.skipped_outside, 0);
            let out = decode(&enc.cls, &enc.reg, &a, 0.5, 0.15).unwrap();
            assert_eq!(out.len(), boxes.len());
            for b in &boxes {
                let hit = out
                    .iter()
                    .find(|o| ((o.x - b.x).powi(2) + (o.y - b.y).powi(2)).sqrt() < a.grid.cell)
                    .unwrap_or_else(|| panic!("no decode near ({}, {})", b.x, b.y));
                assert!((hit.x - b.x).abs() < 1e-9);
                assert!((hit.y - b.y).abs() < 1e-9);
                assert!((hit.z - b.z).abs() < 1e-9);
                assert!((hit.length - b.length).abs() < 1e-9);
                assert!((hit.width - b.width).abs() < 1e-9);
                assert!((hit.height - b.height).abs() < 1e-9);
                // yaw compared modulo pi (footprint symmetry)
                let dy = (hit.yaw - b.yaw).rem_euclid(PI);
                assert!(dy.min(PI - dy) < 1e-9, "yaw {} vs {}", hit.yaw, b.yaw);
            }
        }
    }

    #[test]
    fn yaw_wrap_selects_nearest_half_turn() {
        assert!((wrap_half_turn(0.3) - 0.3).abs() < 1e-12);
        assert!((wrap_half_turn(PI) - 0.0).abs() < 1e-12);
        assert!((wrap_half_turn(2.0) - (2.0 - PI)).abs() < 1e-12);
        assert!((wrap_half_turn(-2.0) - (PI - 2.0)).abs() < 1e-12);
        assert!((wrap_half_turn(FRAC_PI_2) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn raising_threshold_never_adds_boxes() {
        let a = test_anchors();
        let mut rng = DetRng::new(77);
        let (h, w) = (a.grid.height(), a.grid.width());
        let mut cls = GridMap::zeros(2, h, w);
        let mut reg = GridMap::zeros(14, h, w);
        for _ in 0..40 {
            let (r, c) = (rng.next_usize(h), rng.next_usize(w));
            let anchor = rng.next_usize(2);
            cls.set(anchor, r, c, rng.next_f64());
            for k in 0..REG_TARGETS {
                reg.set(anchor * REG_TARGETS + k, r, c, rng.range_f64(-0.1, 0.1));
            }
        }
        let cls = ClassificationMap::from_grid(cls).unwrap();
        let reg = RegressionMap::from_grid(reg).unwrap();
        let mut prev: Option<Vec<Box3D>> = None;
        for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let out = decode(&cls, &reg, &a, t, 0.15).unwrap();
            if let Some(p) = &prev {
                for b in &out {
                    assert!(p.contains(b), "box appeared when threshold rose");
                }
            }
            prev = Some(out);
        }
    }
}
