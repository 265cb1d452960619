//! BEV line-of-sight: an object is visible to an agent iff a ray from the
//! agent reaches it without crossing an occluder or another object's
//! footprint.

use super::Scenario;
use crate::error::{CoreError, Result};
use crate::geometry::{footprint_corners, segment_intersects_footprint};
use serde::{Deserialize, Serialize};

/// Ray-casting configuration. With one ray, visibility is decided at the
/// object center; more rays add shrunken footprint corners as extra
/// targets, and the object counts as visible if any ray gets through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityModel {
    pub ray_count: usize,
}

impl Default for VisibilityModel {
    fn default() -> Self {
        VisibilityModel { ray_count: 1 }
    }
}

impl VisibilityModel {
    pub fn validate(&self) -> Result<()> {
        if self.ray_count == 0 {
            return Err(CoreError::config("ray count must be at least 1"));
        }
        Ok(())
    }
}

/// Indices of scenario objects visible to the given agent.
pub fn visible_objects(scenario: &Scenario, agent_index: usize) -> Vec<usize> {
    let agent = &scenario.agents[agent_index];
    let origin = (agent.pose.x, agent.pose.y);
    (0..scenario.objects.len())
        .filter(|&i| object_visible(scenario, origin, i))
        .collect()
}

fn object_visible(scenario: &Scenario, origin: (f64, f64), target: usize) -> bool {
    let obj = &scenario.objects[target];
    let mut rays: Vec<(f64, f64)> = vec![(obj.x, obj.y)];
    if scenario.visibility.ray_count > 1 {
        for corner in footprint_corners(obj) {
            // aim slightly inside the footprint so a grazing neighbor
            // does not spuriously block the corner ray
            rays.push((
                obj.x + 0.8 * (corner.0 - obj.x),
                obj.y + 0.8 * (corner.1 - obj.y),
            ));
        }
        rays.truncate(scenario.visibility.ray_count.min(5));
    }

    rays.iter().any(|&ray_target| {
        let blocked_by_occluder = scenario
            .occluders
            .iter()
            .any(|o| segment_intersects_footprint(origin, ray_target, &o.footprint()));
        if blocked_by_occluder {
            return false;
        }
        let blocked_by_object = scenario
            .objects
            .iter()
            .enumerate()
            .any(|(i, o)| i != target && segment_intersects_footprint(origin, ray_target, o));
        !blocked_by_object
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BEVGridSpec, Box3D, Pose2D};
    use crate::sim::{Agent, BackboneProfile, Occluder, WorldExtent};

    fn base_scenario() -> Scenario {
        Scenario {
            seed: 0,
            frames: 1,
            grid: BEVGridSpec::new(-48.0, 48.0, -48.0, 48.0, 0.5).unwrap(),
            world: WorldExtent {
                x_min: -20.0,
                x_max: 20.0,
                y_min: -20.0,
                y_max: 20.0,
            },
            visibility: VisibilityModel::default(),
            agents: vec![
                Agent {
                    id: 0,
                    pose: Pose2D::new(-12.0, 0.0, 0.0),
                    profile: BackboneProfile::clean("ego"),
                },
                Agent {
                    id: 1,
                    pose: Pose2D::new(12.0, 0.0, 0.0),
                    profile: BackboneProfile::clean("sender"),
                },
            ],
            objects: vec![],
            occluders: vec![],
        }
    }

    fn car(x: f64, y: f64) -> Box3D {
        Box3D::new(x, y, 0.0, 4.0, 1.8, 1.5, 0.0, 1.0).unwrap()
    }

    #[test]
    fn open_field_everything_visible() {
        let mut s = base_scenario();
        s.objects = vec![car(0.0, 5.0), car(3.0, -6.0)];
        assert_eq!(visible_objects(&s, 0), vec![0, 1]);
        assert_eq!(visible_objects(&s, 1), vec![0, 1]);
    }

    #[test]
    fn wall_blocks_one_side_only() {
        let mut s = base_scenario();
        s.objects = vec![car(-2.0, 0.0)];
        // wall between ego (-12, 0) and the object; sender at +12 is clear
        s.occluders = vec![Occluder {
            x: -7.0,
            y: 0.0,
            length: 5.0,
            width: 0.6,
            yaw: std::f64::consts::FRAC_PI_2,
        }];
        assert!(visible_objects(&s, 0).is_empty());
        assert_eq!(visible_objects(&s, 1), vec![0]);
    }

    #[test]
    fn nearer_object_occludes_farther_one() {
        let mut s = base_scenario();
        // both on the ego's line of sight; the near car hides the far one
        s.objects = vec![car(-4.0, 0.0), car(4.0, 0.0)];
        let vis_ego = visible_objects(&s, 0);
        assert_eq!(vis_ego, vec![0]);
        // sender sees them in the opposite order
        let vis_sender = visible_objects(&s, 1);
        assert_eq!(vis_sender, vec![1]);
    }

    #[test]
    fn opposite_agents_union_covers_wall_scene() {
        let mut s = base_scenario();
        s.objects = vec![car(-2.0, 0.0), car(2.0, 8.0), car(0.0, -8.0)];
        s.occluders = vec![Occluder {
            x: -7.0,
            y: 0.0,
            length: 5.0,
            width: 0.6,
            yaw: std::f64::consts::FRAC_PI_2,
        }];
        let ego: Vec<usize> = visible_objects(&s, 0);
        let sender: Vec<usize> = visible_objects(&s, 1);
        let mut union: Vec<usize> = ego.iter().chain(sender.iter()).copied().collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(union, vec![0, 1, 2]);
        // the wall-hidden object is sender-only
        assert!(!ego.contains(&0));
        assert!(sender.contains(&0));
    }

    #[test]
    fn multi_ray_recovers_partially_hidden_object() {
        let mut s = base_scenario();
        // a slim wall exactly on the center line; corners peek around it
        s.objects = vec![car(0.0, 0.0)];
        s.occluders = vec![Occluder {
            x: -6.0,
            y: 0.0,
            length: 0.8,
            width: 0.4,
            yaw: std::f64::consts::FRAC_PI_2,
        }];
        assert!(visible_objects(&s, 0).is_empty());
        s.visibility = VisibilityModel { ray_count: 5 };
        assert_eq!(visible_objects(&s, 0), vec![0]);
    }
}
