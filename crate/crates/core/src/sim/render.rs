//! Renders a detection head's output for one agent and frame: the
//! ground-truth encoding of the objects the agent can see, degraded by
//! its backbone profile.

use super::{visible_objects, Scenario};
use crate::error::Result;
use crate::geometry::{footprint_corners, Box3D};
use crate::heads::{encode_gt, AnchorGrid, ClassificationMap, RegressionMap, REG_TARGETS};
use crate::rng::DetRng;
use crate::tensor::GridMap;

const SALT_JITTER: u64 = 1;
const SALT_SCORE: u64 = 2;
const SALT_CLUTTER: u64 = 3;

/// Render the (classification, regression) head maps of one agent for one
/// frame, in the agent's own grid frame.
///
/// The pipeline: ray-cast visibility, per-object score from range falloff
/// and calibration, geometry jitter, ground-truth encoding, additive score
/// noise, edge-concentrated regression activation, spurious clutter
/// activations, and optional classification blur. All randomness is keyed
/// by (scenario seed, agent id, frame, entity), so results are independent
/// of evaluation order.
pub fn render_head_maps(
    scenario: &Scenario,
    agent_index: usize,
    frame: usize,
    anchors: &AnchorGrid,
) -> Result<(ClassificationMap, RegressionMap)> {
    let agent = &scenario.agents[agent_index];
    let profile = &agent.profile;
    let key_base = [scenario.seed, u64::from(agent.id), frame as u64];

    // visible objects, transformed into the agent frame, with jitter
    let visible = visible_objects(scenario, agent_index);
    let mut rendered: Vec<Box3D> = Vec::with_capacity(visible.len());
    let mut scores: Vec<f64> = Vec::with_capacity(visible.len());
    for &obj_idx in &visible {
        let world = &scenario.objects[obj_idx];
        let mut local = world.to_frame(&agent.pose);
        if profile.reg_noise_sigma > 0.0 {
            let mut rng = DetRng::from_key(&[
                key_base[0],
                key_base[1],
                key_base[2],
                obj_idx as u64,
                SALT_JITTER,
            ]);
            let s = profile.reg_noise_sigma;
            local.x += s * rng.normal();
            local.y += s * rng.normal();
            local.z += s * rng.normal();
            local.length = (local.length + 0.5 * s * rng.normal()).max(0.3);
            local.width = (local.width + 0.5 * s * rng.normal()).max(0.3);
            local.height = (local.height + 0.5 * s * rng.normal()).max(0.3);
            local.yaw += 0.05 * s * rng.normal();
        }
        let dist = (local.x * local.x + local.y * local.y).sqrt();
        scores.push(profile.calibrate(profile.falloff(dist)));
        rendered.push(local);
    }

    let enc = encode_gt(&rendered, anchors);
    let mut cls = enc.cls.into_grid();
    let mut reg = enc.reg.into_grid();
    let (h, w) = (cls.height(), cls.width());

    // replace the encoder's unit scores with profile-attenuated ones
    for a in &enc.assignments {
        cls.set(a.anchor, a.row, a.col, scores[a.box_index]);
    }

    // edge-concentrated regression activation
    if profile.edge_emphasis > 0.0 {
        for a in &enc.assignments {
            let b = &rendered[a.box_index];
            let template = &anchors.templates[a.anchor];
            let corners = footprint_corners(b);
            let step = anchors.grid.cell / 2.0;
            for e in 0..4 {
                let (x0, y0) = corners[e];
                let (x1, y1) = corners[(e + 1) % 4];
                let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
                let n = (len / step).ceil().max(1.0) as usize;
                for k in 0..=n {
                    let t = k as f64 / n as f64;
                    let px = x0 + t * (x1 - x0);
                    let py = y0 + t * (y1 - y0);
                    let Some((row, col)) = anchors.grid.cell_of(px, py) else {
                        continue;
                    };
                    if row == a.row && col == a.col {
                        continue;
                    }
                    let (cx, cy) = anchors.grid.cell_center(row, col);
                    let d = template.diagonal();
                    let offsets = [
                        (b.x - cx) / d,
                        (b.y - cy) / d,
                        (b.z - template.z_center) / template.height,
                        (b.length / template.length).ln(),
                        (b.width / template.width).ln(),
                        (b.height / template.height).ln(),
                        0.0,
                    ];
                    for (ch, v) in offsets.iter().enumerate() {
                        reg.set(
                            a.anchor * REG_TARGETS + ch,
                            row,
                            col,
                            profile.edge_emphasis * v,
                        );
                    }
                }
            }
        }
    }

    // additive score noise on every anchor cell
    if profile.score_noise_sigma > 0.0 {
        for anchor in 0..cls.channels() {
            for r in 0..h {
                for c in 0..w {
                    let mut rng = DetRng::from_key(&[
                        key_base[0],
                        key_base[1],
                        key_base[2],
                        ((anchor * h + r) * w + c) as u64,
                        SALT_SCORE,
                    ]);
                    let v = cls.value(anchor, r, c) + profile.score_noise_sigma * rng.normal();
                    cls.set(anchor, r, c, v.clamp(0.0, 1.0));
                }
            }
        }
    }

    // spurious activations
    if profile.clutter_rate > 0.0 {
        for r in 0..h {
            for c in 0..w {
                let mut rng = DetRng::from_key(&[
                    key_base[0],
                    key_base[1],
                    key_base[2],
                    (r * w + c) as u64,
                    SALT_CLUTTER,
                ]);
                if rng.next_f64() < profile.clutter_rate {
                    let score = 0.05 + rng.next_f64() * (profile.clutter_score_max - 0.05);
                    let existing = cls.value(0, r, c);
                    cls.set(0, r, c, existing.max(score));
                }
            }
        }
    }

    if profile.blur_radius > 0 {
        cls = box_blur(&cls, profile.blur_radius);
    }

    Ok((
        ClassificationMap::from_grid(cls)?,
        RegressionMap::from_grid(reg)?,
    ))
}

fn box_blur(map: &GridMap, radius: usize) -> GridMap {
    let (ch, h, w) = (map.channels(), map.height(), map.width());
    let mut out = map.clone();
    let r = radius as isize;
    for c in 0..ch {
        for row in 0..h as isize {
            for col in 0..w as isize {
                let mut acc = 0.0;
                let mut n = 0usize;
                for dr in -r..=r {
                    for dc in -r..=r {
                        let (rr, cc) = (row + dr, col + dc);
                        if rr >= 0 && rr < h as isize && cc >= 0 && cc < w as isize {
                            acc += map.value(c, rr as usize, cc as usize);
                            n += 1;
                        }
                    }
                }
                out.set(c, row as usize, col as usize, acc / n as f64);
            }
        }
    }
    out
}
