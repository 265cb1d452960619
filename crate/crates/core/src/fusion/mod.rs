//! Head-fusion strategies.
//!
//! All map-level operators expect the sender map already warped into the
//! ego frame; validity masks drive where fusion actually happens. Cells
//! valid in only one map pass that map's values through; the output
//! validity is always the union.

mod complementary;
mod train;

pub use complementary::{
    fuse_reg_complementary, fuse_reg_complementary_forced, ComplementaryFusion,
    ComplementaryParams, BN_EPSILON,
};
pub use train::{
    dataset_loss, sample_gradient, sample_loss, train_complementary, AdamConfig, TrainReport,
    TrainSample,
};

use crate::error::{CoreError, Result};
use crate::geometry::{nms, Box3D};
use crate::heads::{ClassificationMap, RegressionMap};
use crate::tensor::{scaled_dot_attention, GridMap};

/// Which fusion path an episode runs.
#[derive(Debug, Clone)]
pub enum FusionStrategy {
    /// Ego relies solely on its own maps.
    NoFusion,
    /// Sender transmits final boxes with score >= the threshold; ego pools
    /// and deduplicates.
    LateFusion { sender_score_threshold: f64 },
    /// Heterogeneous head fusion: elementwise max on classification maps,
    /// elementwise mean on regression maps.
    HeteroHead,
    /// Homogeneous head fusion: per-cell self-attention on classification
    /// maps, learned complementary weighting on regression maps.
    HomoHead(Box<ComplementaryParams>),
}

impl FusionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            FusionStrategy::NoFusion => "no_fusion",
            FusionStrategy::LateFusion { .. } => "late_fusion",
            FusionStrategy::HeteroHead => "hetero_head",
            FusionStrategy::HomoHead(_) => "homo_head",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FusionStrategy::LateFusion {
            sender_score_threshold,
        } = self
        {
            if !(0.0..=1.0).contains(sender_score_threshold) {
                return Err(CoreError::config(
                    "late fusion sender threshold must be in [0, 1]",
                ));
            }
        }
        Ok(())
    }
}

fn merge_elementwise(
    ego: &GridMap,
    other: &GridMap,
    op: impl Fn(f64, f64) -> f64,
) -> Result<GridMap> {
    if !ego.same_shape(other) {
        return Err(CoreError::rejected(format!(
            "fusion shape mismatch: {}x{}x{} vs {}x{}x{}",
            ego.channels(),
            ego.height(),
            ego.width(),
            other.channels(),
            other.height(),
            other.width()
        )));
    }
    let (c, h, w) = (ego.channels(), ego.height(), ego.width());
    let mut out = GridMap::zeros(c, h, w);
    let mut validity = vec![false; h * w];
    for r in 0..h {
        for col in 0..w {
            let (ve, vo) = (ego.is_valid(r, col), other.is_valid(r, col));
            validity[r * w + col] = ve || vo;
            for ch in 0..c {
                let v = match (ve, vo) {
                    (true, true) => op(ego.value(ch, r, col), other.value(ch, r, col)),
                    (true, false) => ego.value(ch, r, col),
                    (false, true) => other.value(ch, r, col),
                    (false, false) => 0.0,
                };
                out.set(ch, r, col, v);
            }
        }
    }
    out.with_validity(validity)
}

/// Elementwise-max classification fusion.
pub fn fuse_cls_max(
    cls_ego: &ClassificationMap,
    cls_j: &ClassificationMap,
) -> Result<ClassificationMap> {
    let merged = merge_elementwise(cls_ego.as_grid(), cls_j.as_grid(), f64::max)?;
    ClassificationMap::from_grid(merged)
}

/// Elementwise-mean regression fusion.
pub fn fuse_reg_mean(reg_ego: &RegressionMap, reg_j: &RegressionMap) -> Result<RegressionMap> {
    let merged = merge_elementwise(reg_ego.as_grid(), reg_j.as_grid(), |a, b| (a + b) / 2.0)?;
    RegressionMap::from_grid(merged)
}

/// Per-cell scaled dot-product attention across agents' classification
/// maps, returning the fused map for the agent at `ego_index`.
///
/// At each cell the valid agents' per-anchor score vectors are stacked
/// into an N×A matrix and attended with Q = K = V; the output is the ego
/// agent's row (or the first valid agent's row on cells where the ego map
/// is invalid). Cells where only one agent is valid pass through.
pub fn fuse_cls_attention(
    cls_maps: &[&ClassificationMap],
    ego_index: usize,
) -> Result<ClassificationMap> {
    if cls_maps.is_empty() {
        return Err(CoreError::usage("attention fusion requires at least one map"));
    }
    if ego_index >= cls_maps.len() {
        return Err(CoreError::usage("ego index out of range"));
    }
    let ego = cls_maps[ego_index].as_grid();
    let (a, h, w) = (ego.channels(), ego.height(), ego.width());
    for m in cls_maps {
        if !m.as_grid().same_shape(ego) {
            return Err(CoreError::rejected("attention fusion shape mismatch"));
        }
    }

    let mut out = GridMap::zeros(a, h, w);
    let mut validity = vec![false; h * w];
    let mut stack: Vec<f64> = Vec::with_capacity(cls_maps.len() * a);
    let mut members: Vec<usize> = Vec::with_capacity(cls_maps.len());
    for r in 0..h {
        for col in 0..w {
            stack.clear();
            members.clear();
            for (i, m) in cls_maps.iter().enumerate() {
                if m.as_grid().is_valid(r, col) {
                    members.push(i);
                    for ch in 0..a {
                        stack.push(m.as_grid().value(ch, r, col));
                    }
                }
            }
            if members.is_empty() {
                continue;
            }
            validity[r * w + col] = true;
            let query_row = members.iter().position(|&i| i == ego_index).unwrap_or(0);
            if members.len() == 1 {
                let src = cls_maps[members[0]].as_grid();
                for ch in 0..a {
                    out.set(ch, r, col, src.value(ch, r, col));
                }
            } else {
                let fused = scaled_dot_attention(&stack, members.len(), a);
                for ch in 0..a {
                    out.set(ch, r, col, fused[query_row * a + ch].clamp(0.0, 1.0));
                }
            }
        }
    }
    ClassificationMap::from_grid(out.with_validity(validity)?)
}

/// Late fusion: pool the ego's boxes with the received boxes whose score
/// clears the sender threshold, then deduplicate with NMS.
pub fn late_fuse(
    boxes_ego: &[Box3D],
    boxes_received: &[Box3D],
    sender_threshold: f64,
    nms_iou: f64,
) -> Vec<Box3D> {
    let mut pool: Vec<Box3D> = boxes_ego.to_vec();
    pool.extend(
        boxes_received
            .iter()
            .filter(|b| b.score >= sender_threshold)
            .copied(),
    );
    nms(&pool, nms_iou)
}
