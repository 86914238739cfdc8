//! Stand-in images for sequences recorded without camera images.
//!
//! Each pixel's ray is intersected with the base-frame plane z = 0, which
//! is drawn as a checkerboard so that camera motion is visible. Labeled
//! keypoints are never drawn.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma};
use kptk_core::geometry::{backproject_ray, CameraIntrinsics, RigidTransform};
use nalgebra::Vector2;

/// Checker square size on the ground plane, meters.
pub const CHECKER_SIZE: f64 = 0.05;

const DARK: u8 = 70;
const LIGHT: u8 = 170;
const SKY: u8 = 215;

pub fn placeholder(k: &CameraIntrinsics, camera_in_base: &RigidTransform) -> GrayImage {
    let origin = camera_in_base.translation();
    GrayImage::from_fn(k.width, k.height, |u, v| {
        let d = camera_in_base.transform_vector(&backproject_ray(k, &Vector2::new(f64::from(u), f64::from(v))));
        if d.z >= -1e-9 {
            return Luma([SKY]);
        }
        let p = origin + d * (-origin.z / d.z);
        let parity = ((p.x / CHECKER_SIZE).floor() + (p.y / CHECKER_SIZE).floor()).rem_euclid(2.0);
        Luma([if parity < 0.5 { DARK } else { LIGHT }])
    })
}

pub fn placeholder_png(k: &CameraIntrinsics, camera_in_base: &RigidTransform) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    placeholder(k, camera_in_base).write_to(&mut out, ImageFormat::Png).expect("png encoding to memory");
    out.into_inner()
}
