//! `headfuse` — the experiment pipeline binary.
//!
//! Subcommands: simulate | train | run | eval | bandwidth | sweep.
//! Machine-readable one-line JSON summaries go to stdout; human logs go
//! to stderr. Exit codes: 0 success, 1 runtime failure, 2 bad config.

mod commands;
mod settings;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "headfuse", version, about = "Cooperative perception at the detection-head level")]
struct Cli {
    /// Optional TOML settings file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct CommonOpts {
    /// RNG seed (falls back to HEADFUSE_SEED, then the settings file).
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, default_value = "headfuse_out")]
    out: PathBuf,

    /// Allow replacing files that already exist in the output directory.
    #[arg(long)]
    overwrite: bool,

    /// Worker threads for per-scene parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate scenarios and run episodes under one strategy.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of scenarios to generate.
        #[arg(long, default_value_t = 3)]
        scenes: usize,
        /// no-fusion | late-fusion | hetero-head | homo-head
        #[arg(long, default_value = "no-fusion")]
        strategy: String,
        /// Complementary-fusion checkpoint (required for homo-head).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scenario suite: default | hetero | homo | clutter
        #[arg(long, default_value = "default")]
        suite: String,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        occluders: Option<usize>,
    },
    /// Train the complementary fusion network on the bundled toy set.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Scenes in the generated training set.
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Run episodes over existing scenario files.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Scenario TOML files.
        #[arg(long, num_args = 1..)]
        scenario: Vec<PathBuf>,
        /// Directory of scenario TOML files (alternative to --scenario).
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        #[arg(long, default_value = "no-fusion")]
        strategy: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare strategies (AP50/AP70/Mbps) over a scenario set.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        /// Generated scenes when no directory is given.
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        /// Comma-separated strategy list.
        #[arg(long, default_value = "no-fusion,late-fusion,hetero-head")]
        strategies: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "default")]
        suite: String,
    },
    /// Payload-arithmetic bandwidth report for a grid preset.
    Bandwidth {
        #[command(flatten)]
        common: CommonOpts,
        /// Built-in preset name (v2v4real-like | opv2v-like) or a TOML path.
        #[arg(long, default_value = "v2v4real-like")]
        preset: String,
    },
    /// False-positive count versus transmission threshold.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let settings = match settings::Settings::load(cli.config.as_deref()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("headfuse: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate {
            common,
            scenes,
            strategy,
            checkpoint,
            suite,
            objects,
            frames,
            occluders,
        } => commands::simulate(
            &settings,
            &common,
            scenes,
            &strategy,
            checkpoint.as_deref(),
            &suite,
            objects,
            frames,
            occluders,
        ),
        Command::Train {
            common,
            scenes,
            epochs,
            lr,
        } => commands::train(&settings, &common, scenes, epochs, lr),
        Command::Run {
            common,
            scenario,
            scenario_dir,
            strategy,
            checkpoint,
        } => commands::run(
            &settings,
            &common,
            &scenario,
            scenario_dir.as_deref(),
            &strategy,
            checkpoint.as_deref(),
        ),
        Command::Eval {
            common,
            scenario_dir,
            scenes,
            strategies,
            checkpoint,
            suite,
        } => commands::eval(
            &settings,
            &common,
            scenario_dir.as_deref(),
            scenes,
            &strategies,
            checkpoint.as_deref(),
            &suite,
        ),
        Command::Bandwidth { common, preset } => commands::bandwidth(&settings, &common, &preset),
        Command::Sweep { common, scenes } => commands::sweep(&settings, &common, scenes),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("headfuse: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
