//! Reference training losses over prediction/target map stacks.
//!
//! All losses use sum reduction over channels and pixels. Gradients are with
//! respect to the prediction and are used to validate external trainers.

use ndarray::{Array3, Array4, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{what}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch { what: &'static str, expected: Vec<usize>, found: Vec<usize> },
    #[error("loss weights must be nonnegative, got {0:?}")]
    NegativeWeight(LossWeights),
}

/// Weights of the heatmap, center and depth terms.
///
/// The defaults are placeholders; no reference values are published.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_h: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_h: 1.0, lambda_c: 0.1, lambda_d: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda_h: f64, lambda_c: f64, lambda_d: f64) -> Result<Self, LossError> {
        let w = Self { lambda_h, lambda_c, lambda_d };
        if [lambda_h, lambda_c, lambda_d].iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(LossError::NegativeWeight(w));
        }
        Ok(w)
    }

    /// Weights for the triangulation pipeline, which ignores depth.
    pub fn stereo() -> Self {
        Self { lambda_d: 0.0, ..Self::default() }
    }
}

/// Loss values of one network stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLosses {
    pub heatmap: f64,
    pub center: f64,
    pub depth: f64,
}

fn same_shape(what: &'static str, a: &[usize], b: &[usize]) -> Result<(), LossError> {
    if a != b {
        return Err(LossError::ShapeMismatch { what, expected: a.to_vec(), found: b.to_vec() });
    }
    Ok(())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Binary cross entropy, `-Σ y ln p + (1 - y) ln(1 - p)`.
pub fn heatmap_loss(p: &Array3<f64>, y: &Array3<f64>) -> Result<f64, LossError> {
    same_shape("heatmap", y.shape(), p.shape())?;
    Ok(Zip::from(p).and(y).fold(0.0, |acc, &p, &y| {
        let p = clamp_p(p);
        acc - (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }))
}

/// `∂L_h/∂p`; zero where the prediction is clamped.
pub fn heatmap_loss_grad(p: &Array3<f64>, y: &Array3<f64>) -> Result<Array3<f64>, LossError> {
    same_shape("heatmap", y.shape(), p.shape())?;
    Ok(Zip::from(p).and(y).map_collect(|&p, &y| {
        if p != clamp_p(p) {
            0.0
        } else {
            -(y / p) + (1.0 - y) / (1.0 - p)
        }
    }))
}

/// `0.5 d²` for `|d| < 1`, `|d| - 0.5` otherwise.
pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

pub fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

fn check_center(c_hat: &Array4<f64>, c: &Array4<f64>, mask: &Array3<bool>) -> Result<(), LossError> {
    same_shape("center field", c.shape(), c_hat.shape())?;
    same_shape("center mask", &c.shape()[..3], mask.shape())?;
    if c.shape()[3] != 2 {
        return Err(LossError::ShapeMismatch { what: "center field components", expected: vec![2], found: vec![c.shape()[3]] });
    }
    Ok(())
}

/// Smooth L1 on each vector component over masked pixels.
pub fn center_loss(c_hat: &Array4<f64>, c: &Array4<f64>, mask: &Array3<bool>) -> Result<f64, LossError> {
    check_center(c_hat, c, mask)?;
    let mut total = 0.0;
    for ((ch, i, j), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        for k in 0..2 {
            total += smooth_l1(c_hat[[ch, i, j, k]] - c[[ch, i, j, k]]);
        }
    }
    Ok(total)
}

pub fn center_loss_grad(c_hat: &Array4<f64>, c: &Array4<f64>, mask: &Array3<bool>) -> Result<Array4<f64>, LossError> {
    check_center(c_hat, c, mask)?;
    let mut g = Array4::zeros(c.raw_dim());
    for ((ch, i, j), &m) in mask.indexed_iter() {
        if m {
            for k in 0..2 {
                g[[ch, i, j, k]] = smooth_l1_grad(c_hat[[ch, i, j, k]] - c[[ch, i, j, k]]);
            }
        }
    }
    Ok(g)
}

/// `Σ |z - ẑ|` over masked pixels.
pub fn depth_loss(z_hat: &Array3<f64>, z: &Array3<f64>, mask: &Array3<bool>) -> Result<f64, LossError> {
    same_shape("depth", z.shape(), z_hat.shape())?;
    same_shape("depth mask", z.shape(), mask.shape())?;
    Ok(Zip::from(z_hat).and(z).and(mask).fold(0.0, |acc, &zh, &z, &m| if m { acc + (z - zh).abs() } else { acc }))
}

/// `∂L_d/∂ẑ = sign(ẑ - z)` on the mask (zero at the kink).
pub fn depth_loss_grad(z_hat: &Array3<f64>, z: &Array3<f64>, mask: &Array3<bool>) -> Result<Array3<f64>, LossError> {
    same_shape("depth", z.shape(), z_hat.shape())?;
    same_shape("depth mask", z.shape(), mask.shape())?;
    Ok(Zip::from(z_hat).and(z).and(mask).map_collect(|&zh, &z, &m| {
        let d = zh - z;
        if m && d != 0.0 {
            d.signum()
        } else {
            0.0
        }
    }))
}

/// Weighted sum over both stages.
pub fn total_loss(stage1: &StageLosses, stage2: &StageLosses, w: &LossWeights) -> f64 {
    w.lambda_h * (stage1.heatmap + stage2.heatmap) + w.lambda_c * (stage1.center + stage2.center) + w.lambda_d * (stage1.depth + stage2.depth)
}

/// The mask used by the center and depth terms: nonzero target heatmap.
pub fn support_mask(y: &Array3<f64>) -> Array3<bool> {
    y.mapv(|v| v > 0.0)
}
