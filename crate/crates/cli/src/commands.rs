//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use kptk_core::dataset::{frame_targets, generate_dataset, Camera, GenerateConfig, Manifest, SequenceDataset, Split};
use kptk_core::eval::{Evaluator, FramePrediction, MetricsReport, StageReport, StereoInput};
use kptk_core::extraction::FrameMaps;
use kptk_core::geometry::CameraIntrinsics;
use kptk_core::mono::run_mono_frame;
use kptk_core::results::{encode_trajectory, ResultsFile};
use kptk_core::sim::{simulate_corpus, SimConfig};
use kptk_core::stereo::{run_stereo_frame, Provenance, StageTimings, StereoPoses, TrackingParams};
use kptk_core::targets::{FrameMapping, RenderParams};
use kptk_core::tensor::TensorFile;
use log::{info, warn};
use serde::Serialize;

use crate::config::{Config, Mode, SplitFilter};
use crate::CliError;

pub const REPORT_VERSION: u32 = 1;

/// Frames loaded from disk and tracked at a time.
const TRACK_CHUNK: usize = 64;

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Config(format!("no {what} directory (set paths.{what} or pass the flag)")))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io(path))
}

/// Sequences under `root` in the selected split, ordered by id.
fn load_sequences(root: &Path, split: SplitFilter) -> Result<Vec<SequenceDataset>, CliError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("sequence.toml").is_file())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let seq = SequenceDataset::load(&d)?;
        let keep = match split {
            SplitFilter::All => true,
            SplitFilter::Train => seq.split == Split::Train,
            SplitFilter::Test => seq.split == Split::Test,
        };
        if keep {
            out.push(seq);
        }
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("no {:?} sequences under {}", split, root.display()).to_lowercase()));
    }
    Ok(out)
}

fn tracking_params(config: &Config, seq: &SequenceDataset) -> Result<TrackingParams, CliError> {
    let spec = seq.categories.first().ok_or_else(|| CliError::Input(format!("sequence '{}' defines no category", seq.id)))?;
    Ok(TrackingParams {
        threshold: config.tracking.threshold,
        gating_radius: config.tracking.gating_radius,
        epipolar_cutoff: config.tracking.epipolar_cutoff,
        center_channel: spec.center_channel(),
    })
}

fn render_params(config: &Config) -> RenderParams {
    RenderParams { sigma: config.targets.sigma, depth_radius: config.targets.depth_radius }
}

pub fn simulate(config: &Config) -> Result<(), CliError> {
    let out = required(&config.paths.data, "data")?;
    let s = &config.simulate;
    let sim = SimConfig {
        frame_rate: s.frame_rate,
        duration: s.duration,
        intrinsics: CameraIntrinsics::new(s.focal, s.focal, 640.0, 360.0, 1280, 720).map_err(|e| CliError::Config(e.to_string()))?,
        baseline: s.baseline,
    };
    let corpus = simulate_corpus(s.kind, s.train, s.test, &sim, config.seed);
    fs::create_dir_all(out).map_err(io(out))?;
    for seq in &corpus {
        seq.save(&out.join(&seq.id))?;
    }
    write(&out.join("stamp.txt"), format!("{}\n", config.stamp_line()).as_bytes())?;
    info!("wrote {} {} sequences ({} frames each) to {}", corpus.len(), s.kind.name(), sim.frame_count(), out.display());
    Ok(())
}

pub fn targets(config: &Config) -> Result<(), CliError> {
    let data = required(&config.paths.data, "data")?;
    let out = required(&config.paths.targets, "targets")?;
    let generate = GenerateConfig { render: render_params(config) };
    let stamp = format!("{} seed {}", config.stamp_hash(), config.seed);
    for seq in load_sequences(data, config.split)? {
        let category = match &config.targets.category {
            Some(c) => c.clone(),
            None => seq.categories.first().map(|c| c.name.clone()).ok_or_else(|| CliError::Input(format!("sequence '{}' defines no category", seq.id)))?,
        };
        let manifest = generate_dataset(&seq, &category, &generate, &out.join(&seq.id), Some(stamp.clone()))?;
        info!("{}: {} frames of '{}' targets", seq.id, manifest.frames.len(), category);
    }
    Ok(())
}

fn load_maps(dir: &Path, entry: &kptk_core::dataset::CameraEntry, mapping: FrameMapping) -> Result<FrameMaps, CliError> {
    Ok(FrameMaps {
        heatmaps: TensorFile::read(&dir.join(&entry.heatmap))?.to_maps()?,
        center_field: TensorFile::read(&dir.join(&entry.center))?.to_center_field()?,
        depth: Some(TensorFile::read(&dir.join(&entry.depth))?.to_maps()?),
        mapping,
    })
}

fn track_sequence(config: &Config, seq: &SequenceDataset, dir: &Path) -> Result<Vec<FramePrediction>, CliError> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    if manifest.sequence != seq.id || manifest.frames.len() != seq.frames.len() {
        return Err(CliError::Input(format!(
            "{}: maps of '{}' with {} frames do not belong to sequence '{}' with {} frames",
            dir.display(),
            manifest.sequence,
            manifest.frames.len(),
            seq.id,
            seq.frames.len()
        )));
    }
    let params = tracking_params(config, seq)?;
    let rig = &seq.calibration.rig;
    let mut out = Vec::with_capacity(seq.frames.len());
    for chunk in manifest.frames.chunks(TRACK_CHUNK) {
        for mf in chunk {
            let f = &seq.frames[mf.frame];
            let left = load_maps(dir, &mf.left, manifest.left_mapping)?;
            let objects = match config.tracking.mode {
                Mode::Stereo => {
                    let right = load_maps(dir, &mf.right, manifest.right_mapping)?;
                    run_stereo_frame(&left, &right, rig, &StereoPoses { left: f.left_pose, right: f.right_pose }, &params).objects
                }
                Mode::Mono => run_mono_frame(&left, &rig.left, &f.left_pose, &params)?.objects,
            };
            out.push(FramePrediction { frame: mf.frame, objects });
        }
    }
    Ok(out)
}

pub fn track(config: &Config, trajectory: bool) -> Result<(), CliError> {
    let data = required(&config.paths.data, "data")?;
    let maps = required(&config.paths.targets, "targets")?;
    let out = required(&config.paths.results, "results")?;
    fs::create_dir_all(out).map_err(io(out))?;
    let mode = match config.tracking.mode {
        Mode::Stereo => Provenance::Stereo,
        Mode::Mono => Provenance::Mono,
    };
    for seq in load_sequences(data, config.split)? {
        let frames = track_sequence(config, &seq, &maps.join(&seq.id))?;
        let objects: usize = frames.iter().map(|f| f.objects.len()).sum();
        if trajectory {
            let path = out.join(format!("{}.kptr", seq.id));
            write(&path, &encode_trajectory(&frames))?;
        }
        let results = ResultsFile { stamp: Some((config.stamp_hash(), config.seed)), mode, frames };
        results.write(&out.join(format!("{}.results", seq.id)))?;
        info!("{}: {} objects over {} frames", seq.id, objects, seq.frames.len());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport<'a> {
    version: u32,
    config_hash: String,
    seed: u64,
    metrics: &'a MetricsReport,
}

pub fn eval(config: &Config, out: Option<&Path>, json: Option<&Path>) -> Result<(), CliError> {
    let data = required(&config.paths.data, "data")?;
    let results = required(&config.paths.results, "results")?;
    let mut evaluator = Evaluator::new();
    for seq in load_sequences(data, config.split)? {
        let path = results.join(format!("{}.results", seq.id));
        if !path.is_file() {
            return Err(CliError::Input(format!("no results for sequence '{}' ({})", seq.id, path.display())));
        }
        let r = ResultsFile::read(&path)?;
        evaluator.add_sequence(&seq, &r.frames)?;
    }
    let report = evaluator.report();
    let text = format!("{}\n{}", config.stamp_line(), report.to_text());
    print!("{text}");
    if let Some(p) = out {
        write(p, text.as_bytes())?;
    }
    if let Some(p) = json {
        let body = EvalReport { version: REPORT_VERSION, config_hash: config.stamp_hash(), seed: config.seed, metrics: &report };
        write(p, serde_json::to_string_pretty(&body).expect("report serializes").as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchReport<'a> {
    version: u32,
    config_hash: String,
    seed: u64,
    stages: &'a StageReport,
}

pub fn bench(config: &Config, json: Option<&Path>) -> Result<(), CliError> {
    let data = required(&config.paths.data, "data")?;
    let render = render_params(config);
    let mut total = StageTimings::default();
    let mut frames = 0usize;
    'outer: for seq in load_sequences(data, config.split)? {
        let params = tracking_params(config, &seq)?;
        let spec = &seq.categories[0];
        for f in 0..seq.frames.len() {
            if frames == config.bench.frames {
                break 'outer;
            }
            let input = StereoInput::new(&seq, f, frame_targets(&seq, spec, f, Camera::Left, &render)?, frame_targets(&seq, spec, f, Camera::Right, &render)?);
            total += run_stereo_frame(&input.left, &input.right, &seq.calibration.rig, &input.poses, &params).timings;
            frames += 1;
        }
    }
    if frames < config.bench.frames {
        warn!("only {frames} of the requested {} frames are available", config.bench.frames);
    }
    let report = StageReport::from_totals(&total, frames);
    print!("{}\n{}", config.stamp_line(), report.to_text());
    if let Some(p) = json {
        let body = BenchReport { version: REPORT_VERSION, config_hash: config.stamp_hash(), seed: config.seed, stages: &report };
        write(p, serde_json::to_string_pretty(&body).expect("report serializes").as_bytes())?;
    }
    Ok(())
}

pub fn label_serve(config: &Config) -> Result<(), CliError> {
    let data = required(&config.paths.data, "data")?;
    kptk_label_service::run(config.serve.addr, data.to_path_buf()).map_err(|source| CliError::Io { path: data.to_path_buf(), source })
}
