//! Multi-camera fusion of keypoint weights and features.
//!
//! A lifted keypoint may be seen by several cameras. Each camera that sees
//! it offers a weight (`V * O` sampled at the projection) and a feature; the
//! default strategy keeps the best-weighted camera.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraExtrinsics, CameraIntrinsics, GroundPoint3D};
use crate::pyramid::{rescale_coord, Grid};
use crate::vokd::Keypoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionStrategy {
    #[default]
    Max,
    Mean,
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraProjection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub visible: bool,
}

pub fn project_to_camera(
    point: &GroundPoint3D,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> CameraProjection {
    let p = extr.rot_cam_to_vehicle.transpose() * (point.to_vector() - extr.center());
    project_camera_frame(&p, intr)
}

fn project_camera_frame(p: &Vector3<f64>, intr: &CameraIntrinsics) -> CameraProjection {
    let depth = p.z;
    if !(depth > 0.0) {
        return CameraProjection { pixel: Vector2::new(f64::NAN, f64::NAN), depth, visible: false };
    }
    let pixel = Vector2::new(intr.fx * p.x / depth + intr.cx, intr.fy * p.y / depth + intr.cy);
    CameraProjection { pixel, depth, visible: intr.contains(&pixel) }
}

/// One camera's pyramid level as seen by the fusion step.
#[derive(Debug, Clone, Copy)]
pub struct GroundLevelView<'a> {
    pub camera: &'a Camera,
    pub features: &'a Grid,
    /// `V * O` at this level.
    pub confidence: &'a Grid,
}

impl GroundLevelView<'_> {
    /// Image pixel to this level's grid coordinate.
    pub fn level_coord(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let intr = &self.camera.intrinsics;
        Vector2::new(
            rescale_coord(pixel.x, self.features.width() as f64 / intr.width as f64),
            rescale_coord(pixel.y, self.features.height() as f64 / intr.height as f64),
        )
    }

    /// Weight and feature of `point` in this camera, if it is visible.
    pub fn sample(&self, point: &GroundPoint3D) -> Option<(f64, Vec<f64>)> {
        let proj = project_to_camera(point, &self.camera.intrinsics, &self.camera.extrinsics);
        if !proj.visible {
            return None;
        }
        let q = self.level_coord(&proj.pixel);
        let mut w = [0.0];
        if !self.confidence.lookup_into(&q, &mut w) {
            return None;
        }
        let mut f = vec![0.0; self.features.channels()];
        if !self.features.lookup_into(&q, &mut f) {
            return None;
        }
        Some((w[0], f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPoint {
    pub ground_point: GroundPoint3D,
    pub weight: f64,
    pub feature: Vec<f64>,
    pub source_camera: usize,
}

pub fn fuse_point(
    point: &GroundPoint3D,
    views: &[GroundLevelView<'_>],
    strategy: FusionStrategy,
) -> Result<FusedPoint> {
    let mut samples: Vec<(usize, f64, Vec<f64>)> = views
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.sample(point).map(|(w, f)| (i, w, f)))
        .collect();
    if samples.is_empty() {
        return Err(Error::NotVisible);
    }
    let mut best = 0;
    for (k, s) in samples.iter().enumerate() {
        if s.1 > samples[best].1 {
            best = k;
        }
    }
    let source_camera = samples[best].0;
    match strategy {
        FusionStrategy::Max => {
            let (_, weight, feature) = samples.swap_remove(best);
            Ok(FusedPoint { ground_point: *point, weight, feature, source_camera })
        }
        FusionStrategy::Mean => {
            let n = samples.len() as f64;
            let weight = samples.iter().map(|s| s.1).sum::<f64>() / n;
            let mut feature = vec![0.0; samples[0].2.len()];
            for s in &samples {
                for (a, b) in feature.iter_mut().zip(&s.2) {
                    *a += b;
                }
            }
            feature.iter_mut().for_each(|a| *a /= n);
            Ok(FusedPoint { ground_point: *point, weight, feature, source_camera })
        }
    }
}

/// Fuses every keypoint, preserving order; returns the fused points and the
/// number of keypoints no camera sees at this level.
pub fn fuse_keypoints(
    keypoints: &[Keypoint],
    views: &[GroundLevelView<'_>],
    strategy: FusionStrategy,
) -> (Vec<FusedPoint>, usize) {
    let fused: Vec<Option<FusedPoint>> = keypoints
        .par_iter()
        .map(|k| fuse_point(&k.ground_point, views, strategy).ok())
        .collect();
    let dropped = fused.iter().filter(|f| f.is_none()).count();
    (fused.into_iter().flatten().collect(), dropped)
}
