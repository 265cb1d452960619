//! Full cooperative-perception episodes: render, transmit, fuse, decode,
//! and account for every byte on the wire.

use super::{render_head_maps, Scenario};
use crate::error::{CoreError, Result};
use crate::fusion::{
    fuse_cls_attention, fuse_cls_max, fuse_reg_complementary, fuse_reg_mean, late_fuse,
    FusionStrategy,
};
use crate::geometry::{warp_map, Box3D};
use crate::heads::{decode, AnchorGrid, ClassificationMap, RegressionMap};
use crate::wire::{deserialize, BoxMessage, Codec, HeadMessage, Message, QuantizationSpec};
use serde::{Deserialize, Serialize};

/// Decode/fusion thresholds for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunThresholds {
    /// Minimum classification score for a decoded box.
    pub decode_score: f64,
    /// NMS IoU threshold used by decode and late fusion.
    pub nms_iou: f64,
    /// Late-fusion sender transmission threshold.
    pub sender_score: f64,
}

impl Default for RunThresholds {
    fn default() -> Self {
        RunThresholds {
            decode_score: 0.3,
            nms_iou: 0.15,
            sender_score: 0.75,
        }
    }
}

impl RunThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.decode_score)
            || !(0.0..=1.0).contains(&self.nms_iou)
            || !(0.0..=1.0).contains(&self.sender_score)
        {
            return Err(CoreError::config("thresholds must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub kind: String,
    pub raw_bytes: usize,
    pub sent_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    /// Ego detections in the world frame.
    pub detections: Vec<Box3D>,
    pub messages: Vec<MessageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario_seed: u64,
    pub strategy: String,
    pub frames: Vec<FrameRecord>,
}

impl EpisodeResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("episode result serializes")
    }

    /// (raw, transmitted) message bytes summed per frame.
    pub fn frame_byte_samples(&self) -> Vec<(usize, usize)> {
        self.frames
            .iter()
            .map(|f| {
                f.messages
                    .iter()
                    .fold((0, 0), |(r, s), m| (r + m.raw_bytes, s + m.sent_bytes))
            })
            .collect()
    }
}

/// Run one episode of `scenario` under `strategy`.
///
/// The ego is the first agent. Message arrival follows a
/// first-come-first-serve policy in agent-id order, so with multiple
/// senders only the lowest-id sender is fused each frame; with no sender
/// at all every frame degrades to no-fusion.
pub fn run_episode(
    scenario: &Scenario,
    strategy: &FusionStrategy,
    thresholds: &RunThresholds,
    codec: Codec,
) -> Result<EpisodeResult> {
    scenario.validate()?;
    thresholds.validate()?;
    strategy.validate()?;
    let anchors = AnchorGrid::default_vehicle(scenario.grid);
    let ego = &scenario.agents[0];

    let mut frames = Vec::with_capacity(scenario.frames);
    for frame in 0..scenario.frames {
        let (ego_cls, ego_reg) = render_head_maps(scenario, 0, frame, &anchors)?;
        let mut messages = Vec::new();

        let local_dets: Vec<Box3D> = if scenario.agents.len() < 2 {
            decode(&ego_cls, &ego_reg, &anchors, thresholds.decode_score, thresholds.nms_iou)?
        } else {
            match strategy {
                FusionStrategy::NoFusion => decode(
                    &ego_cls,
                    &ego_reg,
                    &anchors,
                    thresholds.decode_score,
                    thresholds.nms_iou,
                )?,
                FusionStrategy::LateFusion {
                    sender_score_threshold,
                } => {
                    let (s_cls, s_reg) = render_head_maps(scenario, 1, frame, &anchors)?;
                    let sender = &scenario.agents[1];
                    let sender_dets = decode(
                        &s_cls,
                        &s_reg,
                        &anchors,
                        thresholds.decode_score,
                        thresholds.nms_iou,
                    )?;
                    let msg = BoxMessage::from_detections(
                        sender.id,
                        frame as u32,
                        sender.pose,
                        &sender_dets,
                        *sender_score_threshold,
                    );
                    let received = transmit(&Message::Boxes(msg), codec, &mut messages)?;
                    let Message::Boxes(received) = received else {
                        return Err(CoreError::usage("expected a box message"));
                    };
                    let received_ego_frame: Vec<Box3D> = received
                        .boxes
                        .iter()
                        .map(|b| b.to_world(&received.sender_pose).to_frame(&ego.pose))
                        .collect();
                    let ego_dets = decode(
                        &ego_cls,
                        &ego_reg,
                        &anchors,
                        thresholds.decode_score,
                        thresholds.nms_iou,
                    )?;
                    late_fuse(
                        &ego_dets,
                        &received_ego_frame,
                        *sender_score_threshold,
                        thresholds.nms_iou,
                    )
                }
                FusionStrategy::HeteroHead | FusionStrategy::HomoHead(_) => {
                    let (s_cls, s_reg) = render_head_maps(scenario, 1, frame, &anchors)?;
                    let sender = &scenario.agents[1];
                    let msg = HeadMessage::from_maps(
                        sender.id,
                        frame as u32,
                        sender.pose,
                        scenario.grid,
                        &s_cls,
                        &s_reg,
                        &QuantizationSpec::Float32,
                        &QuantizationSpec::Float32,
                    )?;
                    let received = transmit(&Message::Head(Box::new(msg)), codec, &mut messages)?;
                    let Message::Head(received) = received else {
                        return Err(CoreError::usage("expected a head message"));
                    };
                    let (r_cls, r_reg) = received.to_maps()?;
                    let w_cls = ClassificationMap::from_grid(warp_map(
                        r_cls.as_grid(),
                        &received.sender_pose,
                        &ego.pose,
                        &scenario.grid,
                    )?)?;
                    let w_reg = RegressionMap::from_grid(warp_map(
                        r_reg.as_grid(),
                        &received.sender_pose,
                        &ego.pose,
                        &scenario.grid,
                    )?)?;
                    let (fused_cls, fused_reg) = match strategy {
                        FusionStrategy::HeteroHead => (
                            fuse_cls_max(&ego_cls, &w_cls)?,
                            fuse_reg_mean(&ego_reg, &w_reg)?,
                        ),
                        FusionStrategy::HomoHead(params) => (
                            fuse_cls_attention(&[&ego_cls, &w_cls], 0)?,
                            fuse_reg_complementary(&ego_reg, &w_reg, params)?.fused,
                        ),
                        _ => unreachable!(),
                    };
                    decode(
                        &fused_cls,
                        &fused_reg,
                        &anchors,
                        thresholds.decode_score,
                        thresholds.nms_iou,
                    )?
                }
            }
        };

        let detections: Vec<Box3D> = local_dets.iter().map(|b| b.to_world(&ego.pose)).collect();
        frames.push(FrameRecord {
            frame,
            detections,
            messages,
        });
    }

    Ok(EpisodeResult {
        scenario_seed: scenario.seed,
        strategy: strategy.name().to_string(),
        frames,
    })
}

/// Serialize, compress, record sizes, then decompress and parse — the
/// receiver sees exactly what went over the wire.
fn transmit(msg: &Message, codec: Codec, records: &mut Vec<MessageRecord>) -> Result<Message> {
    let raw = msg.to_bytes();
    let sent = codec.compress(&raw);
    records.push(MessageRecord {
        kind: match msg {
            Message::Head(_) => "head".to_string(),
            Message::Boxes(_) => "box".to_string(),
        },
        raw_bytes: raw.len(),
        sent_bytes: sent.len(),
    });
    deserialize(&codec.decompress(&sent)?)
}
