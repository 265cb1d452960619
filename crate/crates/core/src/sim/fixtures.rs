//! Canned scenario configurations: the occlusion benchmark suites, the
//! below-threshold recovery fixture, and the bundled toy training set.

use super::{
    generate_scenario, render_head_maps, Agent, BackboneProfile, Occluder, Scenario,
    ScenarioConfig, VisibilityModel, WorldExtent,
};
use crate::error::Result;
use crate::fusion::TrainSample;
use crate::geometry::{warp_map, BEVGridSpec, Box3D, Pose2D};
use crate::heads::{encode_gt, AnchorGrid, ClassificationMap, RegressionMap};

/// Heterogeneous occlusion benchmark: different backbone profiles per
/// agent, walls between the ego and part of the scene.
pub fn hetero_benchmark_config() -> ScenarioConfig {
    ScenarioConfig {
        n_objects: 12,
        n_occluders: 3,
        frames: 1,
        profiles: vec![BackboneProfile::pillars_like(), BackboneProfile::voxel_like()],
        ..Default::default()
    }
}

/// Homogeneous occlusion benchmark: both agents share a noise-free
/// profile whose range falloff spreads detection scores, so some
/// sender-side objects fall below the late-fusion transmission threshold.
pub fn homo_benchmark_config() -> ScenarioConfig {
    let mut profile = BackboneProfile::clean("pillars_homo");
    profile.falloff_full_range = 10.0;
    profile.falloff_max_range = 50.0;
    profile.edge_emphasis = 0.3;
    ScenarioConfig {
        n_objects: 12,
        n_occluders: 3,
        frames: 1,
        profiles: vec![profile.clone(), profile],
        ..Default::default()
    }
}

/// Sender suite for false-positive threshold sweeps: the sender's head
/// produces spurious activations capped below 0.75.
pub fn clutter_sender_config() -> ScenarioConfig {
    let mut sender = BackboneProfile::voxel_like();
    sender.clutter_rate = 0.0008;
    sender.clutter_score_max = 0.7;
    sender.score_noise_sigma = 0.01;
    ScenarioConfig {
        n_objects: 8,
        n_occluders: 2,
        frames: 2,
        profiles: vec![BackboneProfile::pillars_like(), sender],
        ..Default::default()
    }
}

/// A hand-built scene with one object that only the sender can see, whose
/// sender-side detection score lands strictly between the decode
/// threshold and the 0.75 transmission threshold. Late fusion drops it;
/// head-level fusion recovers it.
pub fn below_threshold_recovery_scenario() -> Scenario {
    let mut sender_profile = BackboneProfile::clean("ranged_sender");
    // the hidden object sits 14 m from the sender: factor = 1 - 9/20 = 0.55
    sender_profile.falloff_full_range = 5.0;
    sender_profile.falloff_max_range = 25.0;

    Scenario {
        seed: 88,
        frames: 1,
        grid: BEVGridSpec::new(-48.0, 48.0, -48.0, 48.0, 0.5).expect("static grid"),
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
                profile: sender_profile,
            },
        ],
        objects: vec![
            // hidden from the ego by the wall, 14 m from the sender
            Box3D {
                x: -2.0,
                y: 0.0,
                z: 0.0,
                length: 4.2,
                width: 1.8,
                height: 1.5,
                yaw: 0.05,
                score: 1.0,
            },
            // context object both agents see
            Box3D {
                x: 0.0,
                y: 8.0,
                z: 0.0,
                length: 4.0,
                width: 1.8,
                height: 1.5,
                yaw: 1.5,
                score: 1.0,
            },
        ],
        occluders: vec![Occluder {
            x: -7.0,
            y: 0.0,
            length: 5.0,
            width: 0.6,
            yaw: std::f64::consts::FRAC_PI_2,
        }],
    }
}

/// Build complementary-fusion training samples from generated scenarios:
/// ego and warped sender regression maps against the ground-truth
/// encoding of every object, positives taken from the ground-truth
/// classification map.
pub fn training_dataset(base_seed: u64, scenes: usize) -> Result<Vec<TrainSample>> {
    let mut config = homo_benchmark_config();
    // a smaller grid keeps the bundled training runs quick
    config.grid = BEVGridSpec::new(-24.0, 24.0, -24.0, 24.0, 0.5)?;
    config.world = WorldExtent {
        x_min: -14.0,
        x_max: 14.0,
        y_min: -14.0,
        y_max: 14.0,
    };
    config.agent_spread = (6.0, 10.0);
    config.n_objects = 8;
    config.frames = 1;

    let anchors = AnchorGrid::default_vehicle(config.grid);
    let mut dataset = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let scenario = generate_scenario(base_seed.wrapping_add(i as u64), &config)?;
        let ego = &scenario.agents[0];
        let sender = &scenario.agents[1];
        let (_, reg_ego) = render_head_maps(&scenario, 0, 0, &anchors)?;
        let (_, reg_sender) = render_head_maps(&scenario, 1, 0, &anchors)?;
        let reg_j = RegressionMap::from_grid(warp_map(
            reg_sender.as_grid(),
            &sender.pose,
            &ego.pose,
            &scenario.grid,
        )?)?;
        let gt_local: Vec<Box3D> = scenario
            .objects
            .iter()
            .map(|o| o.to_frame(&ego.pose))
            .collect();
        let gt = encode_gt(&gt_local, &anchors);
        dataset.push(TrainSample::new(reg_ego, reg_j, gt.reg, &gt.cls)?);
    }
    Ok(dataset)
}

/// Ground-truth classification map helper for tests and tooling.
pub fn ground_truth_maps(
    scenario: &Scenario,
    anchors: &AnchorGrid,
) -> (ClassificationMap, RegressionMap) {
    let ego = &scenario.agents[0];
    let local: Vec<Box3D> = scenario
        .objects
        .iter()
        .map(|o| o.to_frame(&ego.pose))
        .collect();
    let enc = encode_gt(&local, anchors);
    (enc.cls, enc.reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::visible_objects;

    #[test]
    fn recovery_fixture_geometry_holds() {
        let s = below_threshold_recovery_scenario();
        s.validate().unwrap();
        let ego_vis = visible_objects(&s, 0);
        let sender_vis = visible_objects(&s, 1);
        assert!(!ego_vis.contains(&0), "object 0 must be hidden from ego");
        assert!(sender_vis.contains(&0));
        assert!(ego_vis.contains(&1));
        // sender-side score falls in the recoverable band
        let p = &s.agents[1].profile;
        let dist = (s.objects[0].x - s.agents[1].pose.x).abs();
        let score = p.calibrate(p.falloff(dist));
        assert!(score > 0.3 && score < 0.75, "score {score}");
    }

    #[test]
    fn training_dataset_builds_with_positives() {
        let dataset = training_dataset(1000, 2).unwrap();
        assert_eq!(dataset.len(), 2);
        for s in &dataset {
            assert!(s.positive.iter().any(|p| *p));
            assert_eq!(s.reg_ego.as_grid().channels(), 14);
        }
    }

    #[test]
    fn benchmark_configs_validate() {
        hetero_benchmark_config().validate().unwrap();
        homo_benchmark_config().validate().unwrap();
        clutter_sender_config().validate().unwrap();
    }
}
