//! Ground-truth training maps: keypoint heatmaps, center vector fields and
//! keypoint depth maps at output resolution.
//!
//! All maps are indexed `[channel, row, col]`; output-map coordinates are
//! `(x, y) = (col, row)` with pixel centers at integer positions.

use log::warn;
use nalgebra::Vector2;
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default RBF bandwidth in output pixels.
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Bumps are truncated to zero beyond this many bandwidths.
pub const TRUNCATION_SIGMAS: f64 = 3.0;
/// Default radius of the depth disk in output pixels.
pub const DEFAULT_DEPTH_RADIUS: f64 = 3.0;
/// Network output resolution.
pub const OUTPUT_SIZE: usize = 64;
/// Network input resolution.
pub const INPUT_SIZE: f64 = 511.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("invalid category spec: {0}")]
    InvalidCategory(String),
    #[error("keypoint {index} in channel {channel} has no associated object")]
    MissingAssociation { channel: usize, index: usize },
    #[error("keypoint {index} in channel {channel} has invalid depth {depth}")]
    InvalidDepth { channel: usize, index: usize, depth: f64 },
    #[error("expected {expected} keypoint channels, got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
}

/// Keypoint layout of an object category. The center keypoint is appended as
/// the last channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub keypoint_types: Vec<String>,
    /// Per-type flag: several instances per object share one channel.
    pub ambiguous: Vec<bool>,
}

impl CategorySpec {
    pub fn new(name: impl Into<String>, keypoint_types: Vec<String>, ambiguous: Vec<bool>) -> Result<Self, TargetError> {
        let spec = Self { name: name.into(), keypoint_types, ambiguous };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        if self.keypoint_types.is_empty() {
            return Err(TargetError::InvalidCategory(format!("category '{}' has no keypoint types", self.name)));
        }
        if self.ambiguous.len() != self.keypoint_types.len() {
            return Err(TargetError::InvalidCategory(format!(
                "category '{}': {} ambiguity flags for {} types",
                self.name,
                self.ambiguous.len(),
                self.keypoint_types.len()
            )));
        }
        Ok(())
    }

    /// Number of map channels, including the center channel.
    pub fn channels(&self) -> usize {
        self.keypoint_types.len() + 1
    }

    pub fn center_channel(&self) -> usize {
        self.keypoint_types.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.keypoint_types.iter().position(|t| t == name)
    }
}

/// Affine chain from full-image pixels to output-map pixels: crop, resize to
/// the network input, then downsample to the output resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMapping {
    pub crop_origin: [f64; 2],
    pub crop_size: [f64; 2],
    pub input_size: f64,
    pub output_size: usize,
}

impl FrameMapping {
    /// Largest centered square crop.
    pub fn center_crop(width: u32, height: u32) -> Self {
        let side = f64::from(width.min(height));
        Self {
            crop_origin: [(f64::from(width) - side) / 2.0, (f64::from(height) - side) / 2.0],
            crop_size: [side, side],
            input_size: INPUT_SIZE,
            output_size: OUTPUT_SIZE,
        }
    }

    /// Output pixels per image pixel along x and y.
    pub fn scale(&self) -> Vector2<f64> {
        let to_input = Vector2::new(self.input_size / self.crop_size[0], self.input_size / self.crop_size[1]);
        to_input * (self.output_size as f64 / self.input_size)
    }

    pub fn image_to_output(&self, x: &Vector2<f64>) -> Vector2<f64> {
        (x - Vector2::from(self.crop_origin)).component_mul(&self.scale())
    }

    pub fn output_to_image(&self, m: &Vector2<f64>) -> Vector2<f64> {
        m.component_div(&self.scale()) + Vector2::from(self.crop_origin)
    }

    pub fn shape(&self, channels: usize) -> MapShape {
        MapShape { channels, height: self.output_size, width: self.output_size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }
}

/// One keypoint to render, in output-map pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameKeypoint {
    pub position: Vector2<f64>,
    /// Index into the frame's object center list.
    pub object: Option<usize>,
    /// Depth along the camera z axis, meters.
    pub depth: f64,
}

impl FrameKeypoint {
    pub fn new(position: Vector2<f64>, object: usize, depth: f64) -> Self {
        Self { position, object: Some(object), depth }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub sigma: f64,
    pub depth_radius: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA, depth_radius: DEFAULT_DEPTH_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    /// `C x H x W`, values in `[0, 1]`.
    pub heatmaps: Array3<f64>,
    /// `C x H x W x 2`, vectors `(dx, dy)` in output pixels.
    pub center_field: Array4<f64>,
    /// `C x H x W`, meters; zero outside keypoint disks.
    pub depth: Array3<f64>,
    /// `C x H x W`, set where the heatmap is nonzero.
    pub valid_mask: Array3<bool>,
}

impl TargetMaps {
    pub fn zeros(shape: MapShape) -> Self {
        let MapShape { channels, height, width } = shape;
        Self {
            heatmaps: Array3::zeros((channels, height, width)),
            center_field: Array4::zeros((channels, height, width, 2)),
            depth: Array3::zeros((channels, height, width)),
            valid_mask: Array3::from_elem((channels, height, width), false),
        }
    }

    pub fn shape(&self) -> MapShape {
        let (channels, height, width) = self.heatmaps.dim();
        MapShape { channels, height, width }
    }
}

fn check_channels(keypoints: &[Vec<FrameKeypoint>], shape: MapShape) -> Result<(), TargetError> {
    if keypoints.len() != shape.channels {
        return Err(TargetError::ChannelCount { expected: shape.channels, got: keypoints.len() });
    }
    Ok(())
}

/// Keeps in-bounds keypoints, logging the ones that are dropped.
pub fn visible_keypoints(keypoints: &[Vec<FrameKeypoint>], shape: MapShape) -> (Vec<Vec<FrameKeypoint>>, usize) {
    let mut dropped = 0;
    let kept = keypoints
        .iter()
        .enumerate()
        .map(|(c, list)| {
            list.iter()
                .filter(|k| {
                    let ok = k.position.iter().all(|v| v.is_finite()) && shape.contains(&k.position);
                    if !ok {
                        dropped += 1;
                        warn!("channel {c}: keypoint at ({:.2}, {:.2}) is outside the map, treated as not visible", k.position.x, k.position.y);
                    }
                    ok
                })
                .copied()
                .collect()
        })
        .collect();
    (kept, dropped)
}

fn nearest(list: &[FrameKeypoint], x: f64, y: f64) -> Option<(usize, f64)> {
    list.iter()
        .enumerate()
        .map(|(i, k)| (i, (k.position.x - x).powi(2) + (k.position.y - y).powi(2)))
        .fold(None, |best, (i, d2)| match best {
            Some((_, bd)) if bd <= d2 => best,
            _ => Some((i, d2)),
        })
        .map(|(i, d2)| (i, d2.sqrt()))
}

/// Renders one RBF bump per keypoint, each scaled so its largest sampled
/// value is exactly 1, composed per channel by elementwise maximum.
///
/// Out-of-bounds keypoints are excluded. Returns the map and the number of
/// excluded keypoints.
pub fn render_heatmaps(keypoints: &[Vec<FrameKeypoint>], shape: MapShape, sigma: f64) -> Result<(Array3<f64>, usize), TargetError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(TargetError::InvalidSigma(sigma));
    }
    check_channels(keypoints, shape)?;
    let (visible, dropped) = visible_keypoints(keypoints, shape);
    let mut maps = Array3::zeros((shape.channels, shape.height, shape.width));
    let support = TRUNCATION_SIGMAS * sigma;
    let two_s2 = 2.0 * sigma * sigma;

    for (c, list) in visible.iter().enumerate() {
        for k in list {
            let (x, y) = (k.position.x, k.position.y);
            let j0 = (x - support).floor().max(0.0) as usize;
            let j1 = ((x + support).ceil() as usize).min(shape.width - 1);
            let i0 = (y - support).floor().max(0.0) as usize;
            let i1 = ((y + support).ceil() as usize).min(shape.height - 1);

            let mut bump = Vec::with_capacity((i1 - i0 + 1) * (j1 - j0 + 1));
            let mut peak = 0.0_f64;
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let d2 = (j as f64 - x).powi(2) + (i as f64 - y).powi(2);
                    let v = if d2.sqrt() <= support { (-d2 / two_s2).exp() } else { 0.0 };
                    peak = peak.max(v);
                    bump.push((i, j, v));
                }
            }
            if peak <= 0.0 {
                continue;
            }
            for (i, j, v) in bump {
                let cell = &mut maps[[c, i, j]];
                *cell = f64::max(*cell, v / peak);
            }
        }
    }
    Ok((maps, dropped))
}

/// Per-pixel vectors from heatmap support pixels to the owning object's
/// center. The owner of a pixel is the nearest same-channel keypoint. The
/// center channel carries zero vectors.
pub fn render_center_field(
    keypoints: &[Vec<FrameKeypoint>],
    centers: &[Vector2<f64>],
    heatmaps: &Array3<f64>,
    center_channel: usize,
) -> Result<Array4<f64>, TargetError> {
    let (channels, height, width) = heatmaps.dim();
    let shape = MapShape { channels, height, width };
    check_channels(keypoints, shape)?;
    for (c, list) in keypoints.iter().enumerate() {
        for (index, k) in list.iter().enumerate() {
            match k.object {
                Some(o) if o < centers.len() => {}
                _ => return Err(TargetError::MissingAssociation { channel: c, index }),
            }
        }
    }
    let (visible, _) = visible_keypoints(keypoints, shape);

    let mut field = Array4::zeros((channels, height, width, 2));
    for (c, list) in visible.iter().enumerate() {
        if c == center_channel || list.is_empty() {
            continue;
        }
        for i in 0..height {
            for j in 0..width {
                if heatmaps[[c, i, j]] <= 0.0 {
                    continue;
                }
                if let Some((owner, _)) = nearest(list, j as f64, i as f64) {
                    let center = centers[list[owner].object.expect("checked above")];
                    field[[c, i, j, 0]] = center.x - j as f64;
                    field[[c, i, j, 1]] = center.y - i as f64;
                }
            }
        }
    }
    Ok(field)
}

/// Disks of each keypoint's depth with the given radius; overlaps take the
/// nearest keypoint's value.
pub fn render_depth(keypoints: &[Vec<FrameKeypoint>], shape: MapShape, radius: f64) -> Result<Array3<f64>, TargetError> {
    check_channels(keypoints, shape)?;
    for (c, list) in keypoints.iter().enumerate() {
        for (index, k) in list.iter().enumerate() {
            if !(k.depth > 0.0 && k.depth.is_finite()) {
                return Err(TargetError::InvalidDepth { channel: c, index, depth: k.depth });
            }
        }
    }
    let (visible, _) = visible_keypoints(keypoints, shape);
    let mut depth = Array3::zeros((shape.channels, shape.height, shape.width));
    for (c, list) in visible.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        for i in 0..shape.height {
            for j in 0..shape.width {
                if let Some((owner, d)) = nearest(list, j as f64, i as f64) {
                    if d <= radius {
                        depth[[c, i, j]] = list[owner].depth;
                    }
                }
            }
        }
    }
    Ok(depth)
}

/// Renders all three map kinds plus the validity mask for one camera image.
pub fn render_targets(
    keypoints: &[Vec<FrameKeypoint>],
    centers: &[Vector2<f64>],
    shape: MapShape,
    center_channel: usize,
    params: &RenderParams,
) -> Result<(TargetMaps, usize), TargetError> {
    let (heatmaps, dropped) = render_heatmaps(keypoints, shape, params.sigma)?;
    let center_field = render_center_field(keypoints, centers, &heatmaps, center_channel)?;
    let depth = render_depth(keypoints, shape, params.depth_radius)?;
    let valid_mask = heatmaps.mapv(|v| v > 0.0);
    Ok((TargetMaps { heatmaps, center_field, depth, valid_mask }, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn shape(c: usize) -> MapShape {
        MapShape { channels: c, height: 64, width: 64 }
    }

    fn kp(x: f64, y: f64, object: usize, depth: f64) -> FrameKeypoint {
        FrameKeypoint::new(Vector2::new(x, y), object, depth)
    }

    #[test]
    fn category_channels_include_center() {
        let spec = CategorySpec::new("valve", vec!["hub".into(), "spoke".into()], vec![false, true]).unwrap();
        assert_eq!(spec.channels(), 3);
        assert_eq!(spec.center_channel(), 2);
        assert!(CategorySpec::new("x", vec![], vec![]).is_err());
        assert!(CategorySpec::new("x", vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn integer_keypoint_follows_rbf_formula() {
        let kps = vec![vec![kp(10.0, 10.0, 0, 1.0)]];
        let (m, dropped) = render_heatmaps(&kps, shape(1), 2.5).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(m[[0, 10, 10]], 1.0);
        assert_relative_eq!(m[[0, 10, 11]], (-0.08f64).exp(), epsilon = 1e-15);
        // Beyond 3 sigma the bump is truncated.
        assert_eq!(m[[0, 10, 18]], 0.0);
    }

    #[test]
    fn same_type_keypoints_compose_by_max() {
        let kps = vec![vec![kp(10.0, 10.0, 0, 1.0), kp(30.3, 40.6, 1, 1.0)]];
        let (m, _) = render_heatmaps(&kps, shape(1), 1.0).unwrap();
        assert_eq!(m.iter().cloned().fold(0.0, f64::max), 1.0);
        assert_eq!(m[[0, 10, 10]], 1.0);
        assert_eq!(m[[0, 41, 30]], 1.0);
        assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empty_and_out_of_bounds() {
        let kps = vec![vec![], vec![kp(70.0, 3.0, 0, 1.0), kp(-0.5, 3.0, 0, 1.0)]];
        let (m, dropped) = render_heatmaps(&kps, shape(2), 1.0).unwrap();
        assert_eq!(dropped, 2);
        assert!(m.iter().all(|&v| v == 0.0));
        assert!(matches!(render_heatmaps(&kps, shape(2), 0.0), Err(TargetError::InvalidSigma(_))));
        assert!(matches!(render_heatmaps(&kps, shape(3), 1.0), Err(TargetError::ChannelCount { .. })));
    }

    #[test]
    fn center_field_points_at_center() {
        let kps = vec![vec![kp(10.0, 10.0, 0, 1.0)], vec![kp(20.0, 15.0, 0, 1.0)]];
        let centers = [Vector2::new(20.0, 15.0)];
        let (h, _) = render_heatmaps(&kps, shape(2), 1.0).unwrap();
        let f = render_center_field(&kps, &centers, &h, 1).unwrap();
        assert_eq!((f[[0, 10, 10, 0]], f[[0, 10, 10, 1]]), (10.0, 5.0));
        assert_eq!((f[[0, 11, 9, 0]], f[[0, 11, 9, 1]]), (11.0, 4.0));
        // Center channel stores zero vectors, including at its own peak.
        assert_eq!((f[[1, 15, 20, 0]], f[[1, 15, 20, 1]]), (0.0, 0.0));
        // Off support.
        assert_eq!((f[[0, 30, 30, 0]], f[[0, 30, 30, 1]]), (0.0, 0.0));
    }

    #[test]
    fn center_field_requires_association() {
        let kps = vec![vec![FrameKeypoint { position: Vector2::new(3.0, 3.0), object: None, depth: 1.0 }], vec![]];
        let (h, _) = render_heatmaps(&kps, shape(2), 1.0).unwrap();
        assert_eq!(
            render_center_field(&kps, &[], &h, 1),
            Err(TargetError::MissingAssociation { channel: 0, index: 0 })
        );
    }

    #[test]
    fn depth_disk_membership() {
        let kps = vec![vec![kp(10.0, 10.0, 0, 0.62)]];
        let d = render_depth(&kps, shape(1), 3.0).unwrap();
        assert_eq!(d[[0, 10, 12]], 0.62);
        assert_eq!(d[[0, 10, 13]], 0.62);
        assert_eq!(d[[0, 10, 14]], 0.0);
        let d = render_depth(&[vec![]], shape(1), 3.0).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        let bad = vec![vec![kp(10.0, 10.0, 0, 0.0)]];
        assert!(matches!(render_depth(&bad, shape(1), 3.0), Err(TargetError::InvalidDepth { .. })));
    }

    #[test]
    fn mapping_examples() {
        let identity = FrameMapping { crop_origin: [0.0, 0.0], crop_size: [511.0, 511.0], input_size: 511.0, output_size: 64 };
        assert_relative_eq!(identity.image_to_output(&Vector2::new(511.0, 511.0)), Vector2::new(64.0, 64.0), epsilon = 1e-12);
        assert_relative_eq!(identity.scale(), Vector2::new(64.0 / 511.0, 64.0 / 511.0), epsilon = 1e-15);

        let crop = FrameMapping::center_crop(1280, 720);
        assert_eq!(crop.crop_origin, [280.0, 0.0]);
        assert_relative_eq!(crop.image_to_output(&Vector2::new(280.0, 0.0)), Vector2::zeros(), epsilon = 1e-12);
        assert_relative_eq!(crop.image_to_output(&Vector2::new(1000.0, 720.0)), Vector2::new(64.0, 64.0), epsilon = 1e-12);
        assert_relative_eq!(crop.image_to_output(&Vector2::new(640.0, 360.0)), Vector2::new(32.0, 32.0), epsilon = 1e-12);
    }
}
