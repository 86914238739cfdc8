//! `kptk`: simulate sequences, generate training targets, track keypoints,
//! evaluate, benchmark and serve the labeling backend.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kptk_core::sim::SceneKind;
use thiserror::Error;

use crate::config::{Config, Mode, SplitFilter};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] kptk_core::dataset::DatasetError),
    #[error(transparent)]
    Tensor(#[from] kptk_core::tensor::TensorError),
    #[error(transparent)]
    Results(#[from] kptk_core::results::ResultsError),
    #[error(transparent)]
    Eval(#[from] kptk_core::eval::EvalError),
    #[error(transparent)]
    Mono(#[from] kptk_core::mono::MonoError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Parser)]
#[command(name = "kptk", version, about = "Multi-view keypoint labeling and 3D keypoint tracking")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Root directory holding one subdirectory per sequence.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sequences to process.
    #[arg(long, value_enum)]
    split: Option<SplitFilter>,
}

#[derive(Debug, Args)]
struct TrackingFlags {
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    epipolar_cutoff: Option<f64>,
    #[arg(long)]
    gating_radius: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus of labeled stereo sequences.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<SceneKind>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Seconds per sequence.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Render heatmap, center-field and depth tensors for labeled sequences.
    Targets {
        #[command(flatten)]
        common: Common,
        /// Output root; one subdirectory per sequence.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        depth_radius: Option<f64>,
        #[arg(long)]
        category: Option<String>,
    },
    /// Track 3D keypoints from stored maps and write results streams.
    Track {
        #[command(flatten)]
        common: Common,
        /// Root of the maps written by `targets`.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Output directory for `<sequence>.results` files.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[command(flatten)]
        tracking: TrackingFlags,
        /// Also write binary center trajectories (`<sequence>.kptr`).
        #[arg(long)]
        trajectory: bool,
    },
    /// Score results streams against sequence labels.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<sequence>.results` files.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Write the text report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Time the non-network tracking stages on ground-truth maps.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frames: Option<usize>,
        #[command(flatten)]
        tracking: TrackingFlags,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the labeling HTTP API over the sequences in the data root.
    LabelServe {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        addr: Option<std::net::SocketAddr>,
    },
}

fn parse_kind(s: &str) -> Result<SceneKind, String> {
    match s {
        "valve" => Ok(SceneKind::Valve),
        "cups" => Ok(SceneKind::Cups),
        other => Err(format!("unknown scene kind '{other}' (expected valve or cups)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_common(c: &mut Config, common: Common) {
    if common.data.is_some() {
        c.paths.data = common.data;
    }
    set(&mut c.seed, common.seed);
    set(&mut c.split, common.split);
}

fn apply_tracking(c: &mut Config, t: TrackingFlags) {
    set(&mut c.tracking.threshold, t.threshold);
    set(&mut c.tracking.epipolar_cutoff, t.epipolar_cutoff);
    set(&mut c.tracking.gating_radius, t.gating_radius);
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Simulate { common, kind, train, test, duration } => {
            apply_common(&mut config, common);
            set(&mut config.simulate.kind, kind);
            set(&mut config.simulate.train, train);
            set(&mut config.simulate.test, test);
            set(&mut config.simulate.duration, duration);
            config.validate()?;
            commands::simulate(&config)
        }
        Command::Targets { common, out, sigma, depth_radius, category } => {
            apply_common(&mut config, common);
            if out.is_some() {
                config.paths.targets = out;
            }
            set(&mut config.targets.sigma, sigma);
            set(&mut config.targets.depth_radius, depth_radius);
            if category.is_some() {
                config.targets.category = category;
            }
            config.validate()?;
            commands::targets(&config)
        }
        Command::Track { common, targets, out, mode, tracking, trajectory } => {
            apply_common(&mut config, common);
            if targets.is_some() {
                config.paths.targets = targets;
            }
            if out.is_some() {
                config.paths.results = out;
            }
            set(&mut config.tracking.mode, mode);
            apply_tracking(&mut config, tracking);
            config.validate()?;
            commands::track(&config, trajectory)
        }
        Command::Eval { common, results, out, json } => {
            apply_common(&mut config, common);
            if results.is_some() {
                config.paths.results = results;
            }
            config.validate()?;
            commands::eval(&config, out.as_deref(), json.as_deref())
        }
        Command::Bench { common, frames, tracking, json } => {
            apply_common(&mut config, common);
            set(&mut config.bench.frames, frames);
            apply_tracking(&mut config, tracking);
            config.validate()?;
            commands::bench(&config, json.as_deref())
        }
        Command::LabelServe { data, addr } => {
            if data.is_some() {
                config.paths.data = data;
            }
            set(&mut config.serve.addr, addr);
            config.validate()?;
            commands::label_serve(&config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KPTK_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
