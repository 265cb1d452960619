//! Settings file support. Precedence: command-line flags > settings file
//! > built-in defaults.

use headfuse_core::sim::RunThresholds;
use headfuse_core::wire::Codec;
use serde::Deserialize;
use std::path::Path;

use crate::commands::CliError;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SettingsFile {
    pub seed: Option<u64>,
    pub fps: Option<f64>,
    pub jobs: Option<usize>,
    pub decode_score: Option<f64>,
    pub nms_iou: Option<f64>,
    pub sender_score: Option<f64>,
    /// "pass-through" or "deflate"
    pub codec: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub fps: f64,
    pub jobs: usize,
    pub thresholds: RunThresholds,
    pub codec: Codec,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file: SettingsFile = match path {
            None => SettingsFile::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("settings file {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::config(format!("settings file {}: {e}", p.display())))?
            }
        };

        let env_seed = std::env::var("HEADFUSE_SEED")
            .ok()
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| CliError::config(format!("HEADFUSE_SEED must be an integer, got {v:?}")))
            })
            .transpose()?;

        let codec = match file.codec.as_deref() {
            None => Codec::PassThrough,
            Some("pass-through") | Some("pass_through") => Codec::PassThrough,
            Some("deflate") => Codec::Deflate,
            Some(other) => {
                return Err(CliError::config(format!("unknown codec {other:?}")));
            }
        };

        let defaults = RunThresholds::default();
        let thresholds = RunThresholds {
            decode_score: file.decode_score.unwrap_or(defaults.decode_score),
            nms_iou: file.nms_iou.unwrap_or(defaults.nms_iou),
            sender_score: file.sender_score.unwrap_or(defaults.sender_score),
        };
        thresholds
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;

        Ok(Settings {
            seed: env_seed.or(file.seed).unwrap_or(7),
            fps: file.fps.unwrap_or(10.0),
            jobs: file.jobs.unwrap_or(1),
            thresholds,
            codec,
        })
    }

    /// Final seed after applying the flag.
    pub fn seed_with(&self, flag: Option<u64>) -> u64 {
        flag.unwrap_or(self.seed)
    }

    pub fn jobs_with(&self, flag: Option<usize>) -> usize {
        flag.unwrap_or(self.jobs).max(1)
    }
}
