//! Detection evaluation: average precision at BEV IoU thresholds, false
//! positives versus transmission threshold, and strategy comparison
//! tables.

use crate::error::Result;
use crate::fusion::FusionStrategy;
use crate::geometry::{rotated_iou, Box3D};
use crate::sim::{run_episode, RunThresholds, Scenario};
use crate::wire::{mbps, Codec};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// How the precision-recall curve is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApIntegration {
    /// Area under the full precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision over n evenly spaced recall points.
    NPoint(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub integration: ApIntegration,
    /// Thresholds used by `fp_threshold_sweep`.
    pub score_sweep: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: vec![0.5, 0.7],
            integration: ApIntegration::AllPoint,
            score_sweep: (0..=20).map(|i| i as f64 / 20.0).collect(),
        }
    }
}

/// Detections and ground truth for one frame, in a common frame.
#[derive(Debug, Clone, Default)]
pub struct FrameEval {
    pub detections: Vec<Box3D>,
    pub ground_truth: Vec<Box3D>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// Set when the ground truth was empty (AP defined as 0).
    pub zero_gt_warning: bool,
}

fn det_order(a: &Box3D, b: &Box3D) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.x.partial_cmp(&b.x).unwrap_or(Ordering::Equal))
        .then_with(|| a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
        .then_with(|| a.yaw.partial_cmp(&b.yaw).unwrap_or(Ordering::Equal))
}

/// Greedy one-to-one matching within a frame: detections in descending
/// score order claim their best-IoU unmatched ground-truth box.
pub fn label_detections(
    detections: &[Box3D],
    ground_truth: &[Box3D],
    iou_threshold: f64,
) -> Vec<LabeledDetection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| det_order(&detections[i], &detections[j]));
    let mut gt_taken = vec![false; ground_truth.len()];
    let mut labels = vec![
        LabeledDetection {
            score: 0.0,
            is_tp: false
        };
        detections.len()
    ];
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let iou = rotated_iou(det, gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            gt_taken[gi] = true;
            labels[di] = LabeledDetection {
                score: det.score,
                is_tp: true,
            };
        } else {
            labels[di] = LabeledDetection {
                score: det.score,
                is_tp: false,
            };
        }
    }
    labels
}

/// A detection reduced to its score and TP/FP label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDetection {
    pub score: f64,
    pub is_tp: bool,
}

/// Average precision over a set of frames at one IoU threshold.
pub fn average_precision(frames: &[FrameEval], iou_threshold: f64) -> ApResult {
    average_precision_with(frames, iou_threshold, ApIntegration::AllPoint)
}

pub fn average_precision_with(
    frames: &[FrameEval],
    iou_threshold: f64,
    integration: ApIntegration,
) -> ApResult {
    let total_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if total_gt == 0 {
        return ApResult {
            ap: 0.0,
            zero_gt_warning: true,
        };
    }

    // (score, frame, is_tp) with a stable deterministic order
    let mut labeled: Vec<(f64, usize, bool)> = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        for l in label_detections(&frame.detections, &frame.ground_truth, iou_threshold) {
            labeled.push((l.score, fi, l.is_tp));
        }
    }
    labeled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });

    if labeled.is_empty() {
        return ApResult {
            ap: 0.0,
            zero_gt_warning: false,
        };
    }

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall_prec: Vec<(f64, f64)> = Vec::with_capacity(labeled.len());
    for (_, _, is_tp) in &labeled {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall_prec.push((
            tp as f64 / total_gt as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    // precision envelope: for each point, the max precision at >= recall
    let mut envelope = recall_prec.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }

    let ap = match integration {
        ApIntegration::AllPoint => {
            let mut acc = 0.0;
            let mut prev_recall = 0.0;
            for &(r, p) in &envelope {
                if r > prev_recall {
                    acc += (r - prev_recall) * p;
                    prev_recall = r;
                }
            }
            acc
        }
        ApIntegration::NPoint(n) => {
            let n = n.max(2);
            let mut acc = 0.0;
            for k in 0..n {
                let r = k as f64 / (n - 1) as f64;
                let p = envelope
                    .iter()
                    .filter(|(er, _)| *er >= r - 1e-12)
                    .map(|(_, ep)| *ep)
                    .fold(0.0, f64::max);
                acc += p;
            }
            acc / n as f64
        }
    };

    ApResult {
        ap,
        zero_gt_warning: false,
    }
}

/// False-positive count versus transmission threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpSweep {
    /// (threshold, count of FPs with score >= threshold), in input order.
    pub points: Vec<(f64, usize)>,
    /// Smallest threshold with zero transmitted false positives: 0 when
    /// there are no FPs at all, otherwise just above the top FP score.
    pub zero_fp_threshold: f64,
    pub max_fp_score: Option<f64>,
}

impl FpSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fp_count\n");
        for (t, n) in &self.points {
            out.push_str(&format!("{t},{n}\n"));
        }
        out
    }
}

fn next_up(x: f64) -> f64 {
    // smallest f64 strictly greater than a finite non-negative x
    f64::from_bits(x.to_bits() + 1)
}

pub fn fp_threshold_sweep(labeled: &[LabeledDetection], thresholds: &[f64]) -> FpSweep {
    let points = thresholds
        .iter()
        .map(|&t| {
            let n = labeled.iter().filter(|l| !l.is_tp && l.score >= t).count();
            (t, n)
        })
        .collect();
    let max_fp_score = labeled
        .iter()
        .filter(|l| !l.is_tp)
        .map(|l| l.score)
        .fold(None, |acc: Option<f64>, s| {
            Some(acc.map_or(s, |a| a.max(s)))
        });
    FpSweep {
        points,
        zero_fp_threshold: max_fp_score.map_or(0.0, next_up),
        max_fp_score,
    }
}

/// One row of the strategy comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub ap50: f64,
    pub ap70: f64,
    pub mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyTable {
    pub rows: Vec<StrategyRow>,
}

impl StrategyTable {
    pub fn row(&self, strategy: &str) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,ap50,ap70,mbps\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.strategy, r.ap50, r.ap70, r.mbps));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("table serializes")
    }
}

/// Run every strategy over every scenario and tabulate AP and bandwidth.
pub fn compare_strategies(
    scenarios: &[Scenario],
    strategies: &[FusionStrategy],
    thresholds: &RunThresholds,
    codec: Codec,
    fps: f64,
) -> Result<StrategyTable> {
    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let mut frames: Vec<FrameEval> = Vec::new();
        let mut total_bytes = 0usize;
        let mut total_frames = 0usize;
        for scenario in scenarios {
            let episode = run_episode(scenario, strategy, thresholds, codec)?;
            for f in &episode.frames {
                frames.push(FrameEval {
                    detections: f.detections.clone(),
                    ground_truth: scenario.objects.clone(),
                });
                total_bytes += f.messages.iter().map(|m| m.sent_bytes).sum::<usize>();
                total_frames += 1;
            }
        }
        let bytes_per_frame = if total_frames == 0 {
            0.0
        } else {
            total_bytes as f64 / total_frames as f64
        };
        rows.push(StrategyRow {
            strategy: strategy.name().to_string(),
            ap50: average_precision(&frames, 0.5).ap,
            ap70: average_precision(&frames, 0.7).ap,
            mbps: mbps(bytes_per_frame, fps),
        });
    }
    Ok(StrategyTable { rows })
}
