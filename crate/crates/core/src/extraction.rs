//! Keypoint extraction from heatmaps and center-vote grouping into objects.

use nalgebra::Vector2;
use ndarray::{Array3, Array4};
use thiserror::Error;

use crate::targets::FrameMapping;

pub const DEFAULT_THRESHOLD: f64 = 0.25;
/// Half-width of the 5x5 NMS and centroid window.
pub const WINDOW_RADIUS: usize = 2;
pub const DEFAULT_GATING_RADIUS: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection2D {
    pub channel: usize,
    /// Integer `(row, col)` of the surviving maximum.
    pub peak: (usize, usize),
    /// Subpixel position in output-map pixels.
    pub position: Vector2<f64>,
    pub score: f64,
    /// Predicted object center in output-map pixels.
    pub center_vote: Vector2<f64>,
    /// `position` mapped back to full-image pixels.
    pub image_position: Vector2<f64>,
}

/// Predicted (or ground-truth) maps for one camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMaps {
    pub heatmaps: Array3<f64>,
    pub center_field: Array4<f64>,
    pub depth: Option<Array3<f64>>,
    pub mapping: FrameMapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject2D {
    pub center: Detection2D,
    pub keypoints: Vec<Detection2D>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    pub objects: Vec<TrackedObject2D>,
    /// Keypoints without a detected center inside the gating radius.
    pub orphans: Vec<Detection2D>,
}

fn window(center: usize, len: usize) -> std::ops::RangeInclusive<usize> {
    center.saturating_sub(WINDOW_RADIUS)..=(center + WINDOW_RADIUS).min(len - 1)
}

/// Zeroes every value that is not the maximum of its (border-clamped) 5x5
/// neighborhood. Among equal maxima the first index in row-major order wins.
pub fn non_maximum_suppression(heatmaps: &Array3<f64>) -> Array3<f64> {
    let (channels, height, width) = heatmaps.dim();
    let mut out = Array3::zeros((channels, height, width));
    for c in 0..channels {
        for i in 0..height {
            for j in 0..width {
                let v = heatmaps[[c, i, j]];
                if v <= 0.0 {
                    continue;
                }
                let dominated = window(i, height).any(|ii| {
                    window(j, width).any(|jj| {
                        let q = heatmaps[[c, ii, jj]];
                        q > v || (q == v && (ii, jj) < (i, j))
                    })
                });
                if !dominated {
                    out[[c, i, j]] = v;
                }
            }
        }
    }
    out
}

/// Heatmap-weighted mean of `(x, y)` indices over the 5x5 window at a peak.
pub fn weighted_centroid(heatmaps: &Array3<f64>, channel: usize, peak: (usize, usize)) -> Vector2<f64> {
    let (_, height, width) = heatmaps.dim();
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for i in window(peak.0, height) {
        for j in window(peak.1, width) {
            let w = heatmaps[[channel, i, j]].max(0.0);
            sx += w * j as f64;
            sy += w * i as f64;
            sw += w;
        }
    }
    if sw > 0.0 {
        Vector2::new(sx / sw, sy / sw)
    } else {
        Vector2::new(peak.1 as f64, peak.0 as f64)
    }
}

/// Bilinear sample of one channel of a center field at `(x, y)`.
pub fn sample_center_field(field: &Array4<f64>, channel: usize, at: &Vector2<f64>) -> Vector2<f64> {
    let (_, height, width, _) = field.dim();
    let x = at.x.clamp(0.0, (width - 1) as f64);
    let y = at.y.clamp(0.0, (height - 1) as f64);
    let (j0, i0) = (x.floor() as usize, y.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(width - 1), (i0 + 1).min(height - 1));
    let (fx, fy) = (x - j0 as f64, y - i0 as f64);
    let mut out = Vector2::zeros();
    for k in 0..2 {
        let top = field[[channel, i0, j0, k]] * (1.0 - fx) + field[[channel, i0, j1, k]] * fx;
        let bottom = field[[channel, i1, j0, k]] * (1.0 - fx) + field[[channel, i1, j1, k]] * fx;
        out[k] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// NMS, thresholding, subpixel refinement on the unprocessed heatmap and
/// center votes. Detections are ordered by channel, then row-major peak.
pub fn extract_keypoints(heatmaps: &Array3<f64>, center_field: &Array4<f64>, mapping: &FrameMapping, threshold: f64) -> Vec<Detection2D> {
    let suppressed = non_maximum_suppression(heatmaps);
    let (channels, height, width) = heatmaps.dim();
    let mut detections = Vec::new();
    for c in 0..channels {
        for i in 0..height {
            for j in 0..width {
                let score = suppressed[[c, i, j]];
                if score <= 0.0 || score < threshold {
                    continue;
                }
                let position = weighted_centroid(heatmaps, c, (i, j));
                let center_vote = position + sample_center_field(center_field, c, &position);
                detections.push(Detection2D {
                    channel: c,
                    peak: (i, j),
                    position,
                    score,
                    center_vote,
                    image_position: mapping.output_to_image(&position),
                });
            }
        }
    }
    detections
}

/// Groups detections by their nearest center detection (by center vote).
pub fn associate_to_objects(detections: &[Detection2D], center_channel: usize, gating_radius: f64) -> Association {
    let mut objects: Vec<TrackedObject2D> = detections
        .iter()
        .filter(|d| d.channel == center_channel)
        .map(|d| TrackedObject2D { center: *d, keypoints: Vec::new() })
        .collect();
    let mut orphans = Vec::new();
    for d in detections.iter().filter(|d| d.channel != center_channel) {
        let best = objects
            .iter()
            .enumerate()
            .map(|(k, o)| (k, (o.center.position - d.center_vote).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((k, dist)) if dist <= gating_radius => objects[k].keypoints.push(*d),
            _ => orphans.push(*d),
        }
    }
    Association { objects, orphans }
}

#[derive(Debug, Error, PartialEq)]
#[error("malformed detection record: {0}")]
pub struct RecordError(String);

/// One line of the detection debug stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub frame: u64,
    pub channel: usize,
    pub position: Vector2<f64>,
    pub score: f64,
    pub center_vote: Vector2<f64>,
}

impl DetectionRecord {
    pub fn from_detection(frame: u64, d: &Detection2D) -> Self {
        Self { frame, channel: d.channel, position: d.position, score: d.score, center_vote: d.center_vote }
    }

    /// `frame channel x y score vote_x vote_y`, space separated.
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
            self.frame, self.channel, self.position.x, self.position.y, self.score, self.center_vote.x, self.center_vote.y
        )
    }

    pub fn parse(line: &str) -> Result<Self, RecordError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(RecordError(format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|e| RecordError(format!("field {i}: {e}")));
        Ok(Self {
            frame: fields[0].parse().map_err(|e| RecordError(format!("frame: {e}")))?,
            channel: fields[1].parse().map_err(|e| RecordError(format!("channel: {e}")))?,
            position: Vector2::new(num(2)?, num(3)?),
            score: num(4)?,
            center_vote: Vector2::new(num(5)?, num(6)?),
        })
    }
}
