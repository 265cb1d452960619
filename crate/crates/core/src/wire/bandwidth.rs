//! Bandwidth accounting: payload bytes per frame to megabits per second,
//! with a hypothetical 256-channel intermediate-fusion reference row.
//!
//! Accounting is payload-level: radio/MAC overhead is out of scope, and
//! the arithmetic preset rows exclude message headers so channel ratios
//! are exact.

use crate::error::{CoreError, Result};
use crate::geometry::BEVGridSpec;
use serde::{Deserialize, Serialize};

pub const FLOAT32_BYTES: f64 = 4.0;
pub const BOX_WIRE_BYTES: f64 = 32.0; // 7 geometry floats + 1 score, f32

/// Grid/fps configuration for arithmetic bandwidth reports. The shipped
/// presets are reverse-engineered to land near published numbers; they
/// are not authoritative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPreset {
    pub name: String,
    pub grid: BEVGridSpec,
    pub fps: f64,
    pub head_channels: usize,
    pub intermediate_channels: usize,
    pub late_boxes_per_frame: f64,
}

impl BandwidthPreset {
    pub fn from_toml(text: &str) -> Result<Self> {
        let preset: BandwidthPreset =
            toml::from_str(text).map_err(|e| CoreError::config(format!("preset: {e}")))?;
        preset.grid.validate()?;
        if preset.fps <= 0.0 {
            return Err(CoreError::config("preset fps must be positive"));
        }
        Ok(preset)
    }
}

/// Presets shipped with the crate.
pub fn builtin_presets() -> Vec<BandwidthPreset> {
    let sources = [
        include_str!("../../presets/v2v4real_like.toml"),
        include_str!("../../presets/opv2v_like.toml"),
    ];
    sources
        .iter()
        .map(|s| BandwidthPreset::from_toml(s).expect("bundled preset must parse"))
        .collect()
}

pub fn preset_by_name(name: &str) -> Option<BandwidthPreset> {
    let canon = |s: &str| s.replace(['-', '_'], "").to_ascii_lowercase();
    builtin_presets()
        .into_iter()
        .find(|p| canon(&p.name) == canon(name))
}

/// One strategy line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub strategy: String,
    pub channels: Option<usize>,
    /// Payload bytes before compression.
    pub bytes_per_frame_raw: f64,
    /// Transmitted bytes (after compression, if any).
    pub bytes_per_frame: f64,
    pub mbps: f64,
    pub ratio_vs_intermediate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub fps: f64,
    /// Reference payload: `intermediate_channels` float32 values per cell.
    pub intermediate_bytes_per_frame: f64,
    pub rows: Vec<BandwidthRow>,
}

/// Megabits per second carried by `bytes_per_frame` at `fps`.
pub fn mbps(bytes_per_frame: f64, fps: f64) -> f64 {
    bytes_per_frame * 8.0 * fps / 1e6
}

impl BandwidthReport {
    pub fn row(&self, strategy: &str) -> Option<&BandwidthRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    /// Columns: strategy, channels, bytes_per_frame, mbps, ratio_vs_intermediate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,channels,bytes_per_frame,mbps,ratio_vs_intermediate\n");
        for r in &self.rows {
            let channels = r.channels.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.strategy, channels, r.bytes_per_frame, r.mbps, r.ratio_vs_intermediate
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Pure-arithmetic report for a preset: per-cell payload sizes without
/// message headers, so the HEAD/intermediate ratio is exactly the channel
/// ratio.
pub fn preset_report(preset: &BandwidthPreset) -> BandwidthReport {
    let cells = preset.grid.cell_count() as f64;
    let intermediate = cells * preset.intermediate_channels as f64 * FLOAT32_BYTES;
    let head = cells * preset.head_channels as f64 * FLOAT32_BYTES;
    let late = preset.late_boxes_per_frame * BOX_WIRE_BYTES;

    let make = |strategy: &str, channels: Option<usize>, bytes: f64| BandwidthRow {
        strategy: strategy.to_string(),
        channels,
        bytes_per_frame_raw: bytes,
        bytes_per_frame: bytes,
        mbps: mbps(bytes, preset.fps),
        ratio_vs_intermediate: bytes / intermediate,
    };

    BandwidthReport {
        fps: preset.fps,
        intermediate_bytes_per_frame: intermediate,
        rows: vec![
            make("no_fusion", None, 0.0),
            make("late_fusion", None, late),
            make("head", Some(preset.head_channels), head),
            make(
                "intermediate",
                Some(preset.intermediate_channels),
                intermediate,
            ),
        ],
    }
}

/// Measured per-frame message sizes for one strategy.
#[derive(Debug, Clone)]
pub struct StrategySamples {
    pub strategy: String,
    pub channels: Option<usize>,
    /// (raw, transmitted) byte counts per frame.
    pub frame_bytes: Vec<(usize, usize)>,
}

/// Report over measured message sizes. The intermediate reference is a
/// 256-channel float32 map over `grid`.
pub fn report_from_samples(
    samples: &[StrategySamples],
    fps: f64,
    grid: &BEVGridSpec,
    intermediate_channels: usize,
) -> BandwidthReport {
    let intermediate =
        grid.cell_count() as f64 * intermediate_channels as f64 * FLOAT32_BYTES;
    let mut rows: Vec<BandwidthRow> = samples
        .iter()
        .map(|s| {
            let n = s.frame_bytes.len().max(1) as f64;
            let raw: f64 = s.frame_bytes.iter().map(|(r, _)| *r as f64).sum::<f64>() / n;
            let sent: f64 = s.frame_bytes.iter().map(|(_, c)| *c as f64).sum::<f64>() / n;
            BandwidthRow {
                strategy: s.strategy.clone(),
                channels: s.channels,
                bytes_per_frame_raw: raw,
                bytes_per_frame: sent,
                mbps: mbps(sent, fps),
                ratio_vs_intermediate: sent / intermediate,
            }
        })
        .collect();
    rows.push(BandwidthRow {
        strategy: "intermediate".to_string(),
        channels: Some(intermediate_channels),
        bytes_per_frame_raw: intermediate,
        bytes_per_frame: intermediate,
        mbps: mbps(intermediate, fps),
        ratio_vs_intermediate: 1.0,
    });
    BandwidthReport {
        fps,
        intermediate_bytes_per_frame: intermediate,
        rows,
    }
}
