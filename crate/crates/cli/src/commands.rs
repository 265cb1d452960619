//! Implementations of the six subcommands. Each returns the one-line
//! JSON summary to print on stdout.

use crate::settings::Settings;
use crate::CommonOpts;
use headfuse_core::eval::{compare_strategies, fp_threshold_sweep, label_detections};
use headfuse_core::fusion::{train_complementary, ComplementaryParams, FusionStrategy};
use headfuse_core::geometry::Box3D;
use headfuse_core::heads::{decode, AnchorGrid};
use headfuse_core::sim::fixtures::{
    clutter_sender_config, hetero_benchmark_config, homo_benchmark_config, training_dataset,
};
use headfuse_core::sim::{
    generate_scenario, render_head_maps, run_episode, Scenario, ScenarioConfig,
};
use headfuse_core::wire::{preset_by_name, preset_report, BandwidthPreset};
use headfuse_core::CoreError;
use rayon::prelude::*;
use serde_json::json;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or inputs; exit code 2.
    Config(String),
    /// Failure while doing the work; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Usage(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<String, CliError>;

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))
}

/// Refuse to clobber existing outputs unless --overwrite was given.
fn write_output(path: &Path, contents: &[u8], overwrite: bool) -> Result<(), CliError> {
    if path.exists() && !overwrite {
        return Err(CliError::config(format!(
            "{} already exists (pass --overwrite to replace it)",
            path.display()
        )));
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

fn scenario_config_for(suite: &str) -> Result<ScenarioConfig, CliError> {
    match suite {
        "default" => Ok(ScenarioConfig::default()),
        "hetero" => Ok(hetero_benchmark_config()),
        "homo" => Ok(homo_benchmark_config()),
        "clutter" => Ok(clutter_sender_config()),
        other => Err(CliError::config(format!(
            "unknown suite {other:?} (expected default | hetero | homo | clutter)"
        ))),
    }
}

fn parse_strategy(name: &str, checkpoint: Option<&Path>) -> Result<FusionStrategy, CliError> {
    let canon = name.replace('_', "-").to_ascii_lowercase();
    match canon.as_str() {
        "no-fusion" => Ok(FusionStrategy::NoFusion),
        "late-fusion" => Ok(FusionStrategy::LateFusion {
            sender_score_threshold: 0.75,
        }),
        "hetero-head" => Ok(FusionStrategy::HeteroHead),
        "homo-head" => {
            let path = checkpoint.ok_or_else(|| {
                CliError::config("strategy homo-head requires --checkpoint")
            })?;
            let params = ComplementaryParams::load(path).map_err(|e| {
                CliError::config(format!("checkpoint {}: {e}", path.display()))
            })?;
            Ok(FusionStrategy::HomoHead(Box::new(params)))
        }
        other => Err(CliError::config(format!(
            "unknown strategy {other:?} (expected no-fusion | late-fusion | hetero-head | homo-head)"
        ))),
    }
}

fn with_pool<T: Send>(
    jobs: usize,
    work: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    pool.install(work)
}

fn late_fusion_threshold(settings: &Settings) -> f64 {
    settings.thresholds.sender_score
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    settings: &Settings,
    common: &CommonOpts,
    scenes: usize,
    strategy: &str,
    checkpoint: Option<&Path>,
    suite: &str,
    objects: Option<usize>,
    frames: Option<usize>,
    occluders: Option<usize>,
) -> CmdResult {
    let seed = settings.seed_with(common.seed);
    let mut config = scenario_config_for(suite)?;
    if let Some(n) = objects {
        config.n_objects = n;
    }
    if let Some(n) = frames {
        config.frames = n.max(1);
    }
    if let Some(n) = occluders {
        config.n_occluders = n;
    }
    let mut strategy = parse_strategy(strategy, checkpoint)?;
    if let FusionStrategy::LateFusion {
        sender_score_threshold,
    } = &mut strategy
    {
        *sender_score_threshold = late_fusion_threshold(settings);
    }
    ensure_out_dir(&common.out)?;

    let scenarios: Vec<Scenario> = (0..scenes)
        .map(|i| generate_scenario(seed.wrapping_add(i as u64), &config))
        .collect::<Result<_, _>>()?;

    let thresholds = settings.thresholds;
    let codec = settings.codec;
    let episodes = with_pool(settings.jobs_with(common.jobs), || {
        scenarios
            .par_iter()
            .map(|s| run_episode(s, &strategy, &thresholds, codec).map_err(CliError::from))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut written = Vec::new();
    for (i, (scenario, episode)) in scenarios.iter().zip(&episodes).enumerate() {
        let spath = common.out.join(format!("scenario_{i:03}.toml"));
        write_output(&spath, scenario.to_toml()?.as_bytes(), common.overwrite)?;
        let epath = common
            .out
            .join(format!("episode_{i:03}_{}.json", episode.strategy));
        let text = serde_json::to_string_pretty(&episode.to_json())
            .map_err(|e| CliError::runtime(e.to_string()))?;
        write_output(&epath, text.as_bytes(), common.overwrite)?;
        written.push(spath);
        written.push(epath);
    }
    eprintln!(
        "simulate: wrote {} files to {}",
        written.len(),
        common.out.display()
    );
    Ok(json!({
        "command": "simulate",
        "seed": seed,
        "scenes": scenes,
        "strategy": strategy.name(),
        "suite": suite,
        "files": written.len(),
        "out": common.out.display().to_string(),
    })
    .to_string())
}

pub fn train(
    settings: &Settings,
    common: &CommonOpts,
    scenes: usize,
    epochs: usize,
    lr: f64,
) -> CmdResult {
    if epochs == 0 || lr <= 0.0 {
        return Err(CliError::config("epochs and lr must be positive"));
    }
    let seed = settings.seed_with(common.seed);
    ensure_out_dir(&common.out)?;
    eprintln!("train: building {scenes}-scene toy dataset (seed {seed})");
    let dataset = training_dataset(seed.wrapping_mul(1000).wrapping_add(7000), scenes)?;
    let init = ComplementaryParams::init(14, seed)?;
    eprintln!("train: {epochs} epochs at lr {lr}");
    let (trained, report) = train_complementary(&init, &dataset, epochs, lr)?;
    let path = common.out.join("checkpoint.bin");
    write_output(&path, &trained.to_bytes(), common.overwrite)?;
    eprintln!(
        "train: loss {:.6} -> {:.6}, checkpoint at {}",
        report.initial_loss,
        report.final_loss,
        path.display()
    );
    Ok(json!({
        "command": "train",
        "seed": seed,
        "scenes": scenes,
        "epochs": epochs,
        "lr": lr,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "checkpoint": path.display().to_string(),
    })
    .to_string())
}

fn load_scenarios(
    files: &[PathBuf],
    dir: Option<&Path>,
) -> Result<Vec<(PathBuf, Scenario)>, CliError> {
    let mut paths: Vec<PathBuf> = files.to_vec();
    if let Some(d) = dir {
        let entries = std::fs::read_dir(d)
            .map_err(|e| CliError::config(format!("scenario dir {}: {e}", d.display())))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        found.sort();
        paths.extend(found);
    }
    if paths.is_empty() {
        return Err(CliError::config("no scenario files given"));
    }
    paths
        .into_iter()
        .map(|p| {
            let s = Scenario::load(&p)
                .map_err(|e| CliError::config(format!("scenario {}: {e}", p.display())))?;
            Ok((p, s))
        })
        .collect()
}

pub fn run(
    settings: &Settings,
    common: &CommonOpts,
    scenario_files: &[PathBuf],
    scenario_dir: Option<&Path>,
    strategy: &str,
    checkpoint: Option<&Path>,
) -> CmdResult {
    let mut strategy = parse_strategy(strategy, checkpoint)?;
    if let FusionStrategy::LateFusion {
        sender_score_threshold,
    } = &mut strategy
    {
        *sender_score_threshold = late_fusion_threshold(settings);
    }
    let scenarios = load_scenarios(scenario_files, scenario_dir)?;
    ensure_out_dir(&common.out)?;

    let thresholds = settings.thresholds;
    let codec = settings.codec;
    let episodes = with_pool(settings.jobs_with(common.jobs), || {
        scenarios
            .par_iter()
            .map(|(_, s)| run_episode(s, &strategy, &thresholds, codec).map_err(CliError::from))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut files = 0usize;
    let mut detections = 0usize;
    for ((path, _), episode) in scenarios.iter().zip(&episodes) {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "scenario".to_string());
        let epath = common
            .out
            .join(format!("{stem}_{}.json", episode.strategy));
        let text = serde_json::to_string_pretty(&episode.to_json())
            .map_err(|e| CliError::runtime(e.to_string()))?;
        write_output(&epath, text.as_bytes(), common.overwrite)?;
        files += 1;
        detections += episode
            .frames
            .iter()
            .map(|f| f.detections.len())
            .sum::<usize>();
    }
    eprintln!("run: {files} episodes, {detections} detections");
    Ok(json!({
        "command": "run",
        "strategy": strategy.name(),
        "episodes": files,
        "detections": detections,
        "out": common.out.display().to_string(),
    })
    .to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    settings: &Settings,
    common: &CommonOpts,
    scenario_dir: Option<&Path>,
    scenes: usize,
    strategies: &str,
    checkpoint: Option<&Path>,
    suite: &str,
) -> CmdResult {
    let strategy_list: Vec<FusionStrategy> = strategies
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            let mut s = parse_strategy(name, checkpoint)?;
            if let FusionStrategy::LateFusion {
                sender_score_threshold,
            } = &mut s
            {
                *sender_score_threshold = late_fusion_threshold(settings);
            }
            Ok(s)
        })
        .collect::<Result<_, CliError>>()?;
    if strategy_list.is_empty() {
        return Err(CliError::config("no strategies given"));
    }

    let seed = settings.seed_with(common.seed);
    let scenarios: Vec<Scenario> = match scenario_dir {
        Some(dir) => load_scenarios(&[], Some(dir))?
            .into_iter()
            .map(|(_, s)| s)
            .collect(),
        None => {
            let config = scenario_config_for(suite)?;
            (0..scenes)
                .map(|i| generate_scenario(seed.wrapping_add(i as u64), &config))
                .collect::<Result<_, _>>()?
        }
    };
    ensure_out_dir(&common.out)?;

    let thresholds = settings.thresholds;
    let codec = settings.codec;
    let fps = settings.fps;
    let table = with_pool(settings.jobs_with(common.jobs), || {
        compare_strategies(&scenarios, &strategy_list, &thresholds, codec, fps)
            .map_err(CliError::from)
    })?;

    write_output(
        &common.out.join("eval.csv"),
        table.to_csv().as_bytes(),
        common.overwrite,
    )?;
    write_output(
        &common.out.join("eval.json"),
        serde_json::to_string_pretty(&table.to_json())
            .map_err(|e| CliError::runtime(e.to_string()))?
            .as_bytes(),
        common.overwrite,
    )?;
    eprintln!("eval:\n{}", table.to_csv());
    Ok(json!({
        "command": "eval",
        "seed": seed,
        "scenarios": scenarios.len(),
        "rows": table.rows,
        "out": common.out.display().to_string(),
    })
    .to_string())
}

pub fn bandwidth(settings: &Settings, common: &CommonOpts, preset: &str) -> CmdResult {
    let mut preset = match preset_by_name(preset) {
        Some(p) => p,
        None => {
            let path = Path::new(preset);
            if !path.exists() {
                return Err(CliError::config(format!(
                    "unknown preset {preset:?} and no such file"
                )));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("preset {}: {e}", path.display())))?;
            BandwidthPreset::from_toml(&text).map_err(|e| CliError::config(e.to_string()))?
        }
    };
    if common.seed.is_some() {
        eprintln!("bandwidth: --seed has no effect on arithmetic reports");
    }
    preset.fps = settings.fps;
    let report = preset_report(&preset);
    ensure_out_dir(&common.out)?;
    write_output(
        &common.out.join("bandwidth.csv"),
        report.to_csv().as_bytes(),
        common.overwrite,
    )?;
    write_output(
        &common.out.join("bandwidth.json"),
        serde_json::to_string_pretty(&report.to_json())
            .map_err(|e| CliError::runtime(e.to_string()))?
            .as_bytes(),
        common.overwrite,
    )?;
    eprintln!("bandwidth:\n{}", report.to_csv());
    let head = report.row("head").expect("head row present");
    Ok(json!({
        "command": "bandwidth",
        "preset": preset.name,
        "fps": report.fps,
        "head_mbps": head.mbps,
        "intermediate_mbps": report.row("intermediate").map(|r| r.mbps),
        "late_mbps": report.row("late_fusion").map(|r| r.mbps),
        "ratio_vs_intermediate": head.ratio_vs_intermediate,
        "out": common.out.display().to_string(),
    })
    .to_string())
}

pub fn sweep(settings: &Settings, common: &CommonOpts, scenes: usize) -> CmdResult {
    let seed = settings.seed_with(common.seed);
    let config = clutter_sender_config();
    let anchors = AnchorGrid::default_vehicle(config.grid);
    let thresholds = settings.thresholds;
    let mut labeled = Vec::new();
    for i in 0..scenes {
        let scenario = generate_scenario(seed.wrapping_add(i as u64), &config)?;
        let sender_index = if scenario.agents.len() > 1 { 1 } else { 0 };
        let sender = &scenario.agents[sender_index];
        for frame in 0..scenario.frames {
            let (cls, reg) = render_head_maps(&scenario, sender_index, frame, &anchors)?;
            let dets = decode(
                &cls,
                &reg,
                &anchors,
                thresholds.decode_score,
                thresholds.nms_iou,
            )?;
            let world: Vec<Box3D> = dets.iter().map(|b| b.to_world(&sender.pose)).collect();
            labeled.extend(label_detections(&world, &scenario.objects, 0.5));
        }
    }
    let grid: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
    let sweep = fp_threshold_sweep(&labeled, &grid);
    ensure_out_dir(&common.out)?;
    write_output(
        &common.out.join("fp_sweep.csv"),
        sweep.to_csv().as_bytes(),
        common.overwrite,
    )?;
    eprintln!(
        "sweep: {} detections, zero-fp threshold {:.4}",
        labeled.len(),
        sweep.zero_fp_threshold
    );
    Ok(json!({
        "command": "sweep",
        "seed": seed,
        "scenes": scenes,
        "detections": labeled.len(),
        "false_positives_at_zero": sweep.points.first().map(|(_, n)| n),
        "zero_fp_threshold": sweep.zero_fp_threshold,
        "out": common.out.display().to_string(),
    })
    .to_string())
}
