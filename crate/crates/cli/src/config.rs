//! Run configuration: a TOML file whose values flags may override.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use kptk_core::extraction::{DEFAULT_GATING_RADIUS, DEFAULT_THRESHOLD};
use kptk_core::sim::{SceneKind, DEFAULT_BASELINE, DEFAULT_DURATION, DEFAULT_FOCAL, DEFAULT_FRAME_RATE};
use kptk_core::stereo::DEFAULT_EPIPOLAR_CUTOFF;
use kptk_core::targets::{DEFAULT_DEPTH_RADIUS, DEFAULT_SIGMA};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stereo,
    Mono,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitFilter {
    Train,
    Test,
    All,
}

/// Locations only; not part of the reproducibility hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub kind: SceneKind,
    pub train: usize,
    pub test: usize,
    /// Seconds per sequence.
    pub duration: f64,
    pub frame_rate: f64,
    pub focal: f64,
    pub baseline: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { kind: SceneKind::Valve, train: 45, test: 5, duration: DEFAULT_DURATION, frame_rate: DEFAULT_FRAME_RATE, focal: DEFAULT_FOCAL, baseline: DEFAULT_BASELINE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetsConfig {
    /// Gaussian σ in output pixels.
    pub sigma: f64,
    /// Output pixels around each keypoint that carry its depth.
    pub depth_radius: f64,
    /// Category to render; the first category of each sequence when unset.
    pub category: Option<String>,
}

impl Default for TargetsConfig {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA, depth_radius: DEFAULT_DEPTH_RADIUS, category: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub mode: Mode,
    pub threshold: f64,
    /// Full-image pixels.
    pub epipolar_cutoff: f64,
    /// Output pixels.
    pub gating_radius: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { mode: Mode::Stereo, threshold: DEFAULT_THRESHOLD, epipolar_cutoff: DEFAULT_EPIPOLAR_CUTOFF, gating_radius: DEFAULT_GATING_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub frames: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { frames: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub addr: SocketAddr,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: SocketAddr::from(([127, 0, 0, 1], 8080)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub split: SplitFilter,
    pub paths: Paths,
    pub simulate: SimulateConfig,
    pub targets: TargetsConfig,
    pub tracking: TrackingConfig,
    pub bench: BenchConfig,
    pub serve: ServeConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            split: SplitFilter::Test,
            paths: Paths::default(),
            simulate: SimulateConfig::default(),
            targets: TargetsConfig::default(),
            tracking: TrackingConfig::default(),
            bench: BenchConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("targets.sigma", self.targets.sigma),
            ("targets.depth_radius", self.targets.depth_radius),
            ("tracking.threshold", self.tracking.threshold),
            ("tracking.epipolar_cutoff", self.tracking.epipolar_cutoff),
            ("tracking.gating_radius", self.tracking.gating_radius),
            ("simulate.duration", self.simulate.duration),
            ("simulate.frame_rate", self.simulate.frame_rate),
            ("simulate.focal", self.simulate.focal),
            ("simulate.baseline", self.simulate.baseline),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if self.tracking.threshold > 1.0 {
            return Err(CliError::Config(format!("tracking.threshold must not exceed 1, got {}", self.tracking.threshold)));
        }
        if self.bench.frames == 0 {
            return Err(CliError::Config("bench.frames must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over every setting except paths and the listen address.
    pub fn stamp_hash(&self) -> String {
        let params = Config { paths: Paths::default(), serve: ServeConfig::default(), ..self.clone() };
        let text = toml::to_string(&params).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn stamp_line(&self) -> String {
        format!("# stamp {} seed {}", self.stamp_hash(), self.seed)
    }
}
