//! Seeded synthetic BEV worlds: agents with heterogeneous backbone
//! profiles, target objects, occluder walls, and deterministic scenario
//! generation. Scenario files are TOML.

mod episode;
pub mod fixtures;
mod render;
mod visibility;

pub use episode::{run_episode, EpisodeResult, FrameRecord, MessageRecord, RunThresholds};
pub use render::render_head_maps;
pub use visibility::{visible_objects, VisibilityModel};

use crate::error::{CoreError, Result};
use crate::geometry::{BEVGridSpec, Box3D, Pose2D};
use crate::rng::DetRng;
use serde::{Deserialize, Serialize};

/// Monotone piecewise-linear score calibration over [0, 1].
pub type CalibrationCurve = Vec<[f64; 2]>;

fn identity_calibration() -> CalibrationCurve {
    vec![[0.0, 0.0], [1.0, 1.0]]
}

/// Sensor/backbone characteristics of one agent. Profiles model the
/// heterogeneity between detection stacks without running real backbones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneProfile {
    pub name: String,
    /// Additive Gaussian noise on classification scores (clamped to [0, 1]).
    #[serde(default)]
    pub score_noise_sigma: f64,
    /// Gaussian jitter on rendered box geometry, meters.
    #[serde(default)]
    pub reg_noise_sigma: f64,
    /// Box-mean blur radius on the classification map, cells.
    #[serde(default)]
    pub blur_radius: usize,
    /// Monotone piecewise-linear map from raw to calibrated score.
    #[serde(default = "identity_calibration")]
    pub calibration: CalibrationCurve,
    /// Detection score factor is 1 inside this range (meters)...
    #[serde(default = "default_full_range")]
    pub falloff_full_range: f64,
    /// ...and falls linearly to 0 at this range.
    #[serde(default = "default_max_range")]
    pub falloff_max_range: f64,
    /// Extra regression activation painted on footprint-perimeter cells.
    #[serde(default)]
    pub edge_emphasis: f64,
    /// Per-cell probability of a spurious classification activation.
    #[serde(default)]
    pub clutter_rate: f64,
    /// Spurious activations score at most this much.
    #[serde(default = "default_clutter_score_max")]
    pub clutter_score_max: f64,
}

fn default_full_range() -> f64 {
    1e9
}

fn default_max_range() -> f64 {
    1e9
}

fn default_clutter_score_max() -> f64 {
    0.7
}

impl BackboneProfile {
    /// Noise-free profile: maps equal the ground-truth encoding exactly.
    pub fn clean(name: &str) -> Self {
        BackboneProfile {
            name: name.to_string(),
            score_noise_sigma: 0.0,
            reg_noise_sigma: 0.0,
            blur_radius: 0,
            calibration: identity_calibration(),
            falloff_full_range: default_full_range(),
            falloff_max_range: default_max_range(),
            edge_emphasis: 0.0,
            clutter_rate: 0.0,
            clutter_score_max: default_clutter_score_max(),
        }
    }

    /// Pillar-grid style backbone: sharp scores, mild geometry noise.
    pub fn pillars_like() -> Self {
        BackboneProfile {
            name: "pillars_like".to_string(),
            score_noise_sigma: 0.02,
            reg_noise_sigma: 0.04,
            blur_radius: 0,
            calibration: vec![[0.0, 0.0], [0.5, 0.55], [1.0, 1.0]],
            falloff_full_range: 30.0,
            falloff_max_range: 90.0,
            edge_emphasis: 0.3,
            clutter_rate: 0.0,
            clutter_score_max: 0.7,
        }
    }

    /// Sparse-voxel style backbone: slightly noisier geometry, softer
    /// score calibration.
    pub fn voxel_like() -> Self {
        BackboneProfile {
            name: "voxel_like".to_string(),
            score_noise_sigma: 0.03,
            reg_noise_sigma: 0.07,
            blur_radius: 0,
            calibration: vec![[0.0, 0.0], [0.5, 0.45], [1.0, 0.97]],
            falloff_full_range: 28.0,
            falloff_max_range: 85.0,
            edge_emphasis: 0.45,
            clutter_rate: 0.0,
            clutter_score_max: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.score_noise_sigma < 0.0 || self.reg_noise_sigma < 0.0 {
            return Err(CoreError::config("noise sigmas must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.clutter_rate)
            || !(0.0..=1.0).contains(&self.clutter_score_max)
        {
            return Err(CoreError::config("clutter parameters must be in [0, 1]"));
        }
        if self.edge_emphasis < 0.0 {
            return Err(CoreError::config("edge emphasis must be non-negative"));
        }
        if !(0.0 <= self.falloff_full_range && self.falloff_full_range <= self.falloff_max_range) {
            return Err(CoreError::config("falloff ranges must satisfy 0 <= full <= max"));
        }
        if self.calibration.len() < 2 {
            return Err(CoreError::config("calibration needs at least two points"));
        }
        let first = self.calibration.first().unwrap();
        let last = self.calibration.last().unwrap();
        if first[0] != 0.0 || last[0] != 1.0 {
            return Err(CoreError::config("calibration must span x in [0, 1]"));
        }
        for pair in self.calibration.windows(2) {
            if pair[1][0] <= pair[0][0] || pair[1][1] < pair[0][1] {
                return Err(CoreError::config("calibration must be monotone"));
            }
        }
        if self
            .calibration
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p[1]))
        {
            return Err(CoreError::config("calibration values must be in [0, 1]"));
        }
        Ok(())
    }

    /// Piecewise-linear calibration lookup, clamped to [0, 1].
    pub fn calibrate(&self, score: f64) -> f64 {
        let s = score.clamp(0.0, 1.0);
        for pair in self.calibration.windows(2) {
            let [x0, y0] = pair[0];
            let [x1, y1] = pair[1];
            if s <= x1 {
                return y0 + (y1 - y0) * (s - x0) / (x1 - x0);
            }
        }
        self.calibration.last().unwrap()[1]
    }

    /// Range-dependent score factor.
    pub fn falloff(&self, distance: f64) -> f64 {
        if distance <= self.falloff_full_range {
            1.0
        } else if distance >= self.falloff_max_range {
            0.0
        } else {
            1.0 - (distance - self.falloff_full_range)
                / (self.falloff_max_range - self.falloff_full_range)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u32,
    pub pose: Pose2D,
    pub profile: BackboneProfile,
}

/// Axis of an occluding wall in the BEV plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
}

impl Occluder {
    pub fn footprint(&self) -> Box3D {
        Box3D {
            x: self.x,
            y: self.y,
            z: 0.0,
            length: self.length,
            width: self.width,
            height: 2.0,
            yaw: self.yaw,
            score: 1.0,
        }
    }
}

/// Rectangle objects may be placed in, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl WorldExtent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// A complete synthetic world. Deterministic given its seed and config;
/// object ground truth is in the world frame, agent head maps live on
/// ego-centric copies of `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub frames: usize,
    pub grid: BEVGridSpec,
    pub world: WorldExtent,
    #[serde(default)]
    pub visibility: VisibilityModel,
    pub agents: Vec<Agent>,
    pub objects: Vec<Box3D>,
    pub occluders: Vec<Occluder>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(CoreError::config("scenario needs at least one agent"));
        }
        if self.frames == 0 {
            return Err(CoreError::config("scenario needs at least one frame"));
        }
        self.grid.validate()?;
        self.visibility.validate()?;
        for pair in self.agents.windows(2) {
            if pair[1].id <= pair[0].id {
                return Err(CoreError::config("agent ids must be strictly increasing"));
            }
        }
        for a in &self.agents {
            a.profile.validate()?;
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !self.world.contains(o.x, o.y) {
                return Err(CoreError::config(format!(
                    "object {i} at ({}, {}) outside world extent",
                    o.x, o.y
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::config(format!("scenario encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario =
            toml::from_str(text).map_err(|e| CoreError::config(format!("scenario parse: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Generation knobs for `generate_scenario`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_objects: usize,
    pub n_agents: usize,
    pub frames: usize,
    pub n_occluders: usize,
    pub grid: BEVGridSpec,
    pub world: WorldExtent,
    /// Half the ego/sender separation along x, sampled in this range.
    pub agent_spread: (f64, f64),
    /// Uniform yaw jitter applied to agent headings. Zero keeps agents
    /// axis-aligned so warped regression content needs no rotational
    /// correction (map alignment is treated as externally solved).
    pub agent_yaw_jitter: f64,
    /// When set, object yaw clusters around the two road axes instead of
    /// being uniform in (-pi, pi].
    pub lane_aligned_yaw: bool,
    /// Profiles assigned round-robin to agents.
    pub profiles: Vec<BackboneProfile>,
    pub max_attempts: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_objects: 12,
            n_agents: 2,
            frames: 2,
            n_occluders: 3,
            grid: BEVGridSpec::new(-48.0, 48.0, -48.0, 48.0, 0.5).expect("static grid"),
            world: WorldExtent {
                x_min: -18.0,
                x_max: 18.0,
                y_min: -18.0,
                y_max: 18.0,
            },
            agent_spread: (8.0, 14.0),
            agent_yaw_jitter: 0.0,
            lane_aligned_yaw: true,
            profiles: vec![BackboneProfile::pillars_like(), BackboneProfile::voxel_like()],
            max_attempts: 0, // 0 = auto (200 per object)
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(CoreError::config("need at least one agent"));
        }
        if self.profiles.is_empty() {
            return Err(CoreError::config("need at least one profile"));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        self.grid.validate()?;
        if self.agent_spread.0 > self.agent_spread.1 || self.agent_spread.0 < 0.0 {
            return Err(CoreError::config("agent spread range invalid"));
        }
        Ok(())
    }
}

/// Deterministically generate a scenario. Objects are rejection-sampled to
/// keep pairwise BEV IoU below 0.01 and centers in distinct grid cells.
pub fn generate_scenario(seed: u64, config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = DetRng::from_key(&[seed, 0x5343_454e]);

    // agents: ego on the -x side, sender(s) spread on the +x side
    let mut agents = Vec::with_capacity(config.n_agents);
    for i in 0..config.n_agents {
        let spread = rng.range_f64(config.agent_spread.0, config.agent_spread.1);
        let side = if i == 0 { -1.0 } else { 1.0 };
        let lateral = rng.range_f64(-4.0, 4.0);
        let yaw = if config.agent_yaw_jitter > 0.0 {
            rng.range_f64(-config.agent_yaw_jitter, config.agent_yaw_jitter)
        } else {
            0.0
        };
        let x = side * spread + if i > 1 { rng.range_f64(-3.0, 3.0) } else { 0.0 };
        let y = lateral + if i > 1 { (i as f64 - 1.0) * 5.0 } else { 0.0 };
        agents.push(Agent {
            id: i as u32,
            pose: Pose2D::new(x, y, yaw),
            profile: config.profiles[i % config.profiles.len()].clone(),
        });
    }

    // occluder walls, mostly perpendicular to the ego-sender axis
    let mut occluders = Vec::with_capacity(config.n_occluders);
    for _ in 0..config.n_occluders {
        occluders.push(Occluder {
            x: rng.range_f64(-12.0, 6.0),
            y: rng.range_f64(-14.0, 14.0),
            length: rng.range_f64(4.0, 9.0),
            width: 0.6,
            yaw: std::f64::consts::FRAC_PI_2 + rng.range_f64(-0.35, 0.35),
        });
    }

    // objects by rejection sampling
    let max_attempts = if config.max_attempts == 0 {
        200 * config.n_objects.max(1)
    } else {
        config.max_attempts
    };
    let mut objects: Vec<Box3D> = Vec::with_capacity(config.n_objects);
    let mut attempts = 0usize;
    while objects.len() < config.n_objects {
        attempts += 1;
        if attempts > max_attempts {
            return Err(CoreError::ScenarioGeneration(format!(
                "placed {} of {} objects in {max_attempts} attempts",
                objects.len(),
                config.n_objects
            )));
        }
        let margin = 1.0;
        let yaw = if config.lane_aligned_yaw {
            let axis = if rng.next_f64() < 0.5 {
                0.0
            } else {
                std::f64::consts::FRAC_PI_2
            };
            axis + rng.range_f64(-0.15, 0.15)
        } else {
            rng.range_f64(-std::f64::consts::PI, std::f64::consts::PI)
        };
        let candidate = Box3D {
            x: rng.range_f64(config.world.x_min + margin, config.world.x_max - margin),
            y: rng.range_f64(config.world.y_min + margin, config.world.y_max - margin),
            z: rng.range_f64(-0.3, 0.3),
            length: rng.range_f64(3.6, 4.8),
            width: rng.range_f64(1.5, 2.0),
            height: rng.range_f64(1.4, 1.8),
            yaw,
            score: 1.0,
        };
        let min_center_dist = 1.5 * config.grid.cell.max(1.0);
        let clear_of_objects = objects.iter().all(|o| {
            crate::geometry::rotated_iou(o, &candidate) < 0.01
                && ((o.x - candidate.x).powi(2) + (o.y - candidate.y).powi(2)).sqrt()
                    > min_center_dist
        });
        let clear_of_occluders = occluders
            .iter()
            .all(|o| crate::geometry::rotated_iou(&o.footprint(), &candidate) == 0.0);
        if clear_of_objects && clear_of_occluders {
            objects.push(candidate);
        }
    }

    let scenario = Scenario {
        seed,
        frames: config.frames.max(1),
        grid: config.grid,
        world: config.world,
        visibility: VisibilityModel::default(),
        agents,
        objects,
        occluders,
    };
    scenario.validate()?;
    Ok(scenario)
}
