//! Spatial embedding: three per-pixel channels (heading, distance, height)
//! describing where each pixel sits relative to the vehicle.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    inverse_project, lift_to_ground, Anchor, CameraExtrinsics, CameraIntrinsics, GroundPoint3D,
    PlanarTransform, SatelliteFrame,
};
use crate::pyramid::Grid;

pub const HEADING: usize = 0;
pub const DISTANCE: usize = 1;
pub const HEIGHT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConfig {
    /// Distance normalizer, meters.
    pub max_visible_distance: f64,
    /// Constant height value written for top-down (satellite) views.
    pub satellite_height_value: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            max_visible_distance: 200.0,
            satellite_height_value: -1.0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_visible_distance > 0.0) {
            return Err(Error::Config(format!(
                "max visible distance must be positive, got {}",
                self.max_visible_distance
            )));
        }
        Ok(())
    }
}

/// `h x w x 3` map; channel 0 heading, 1 distance, 2 height.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    grid: Grid,
}

impl EmbeddingMap {
    pub fn from_grid(grid: Grid) -> Result<Self> {
        if grid.channels() != 3 {
            return Err(Error::Config(format!("embedding needs 3 channels, got {}", grid.channels())));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.grid.get(row, col, ch)
    }
}

/// Cosine of the bearing of `(x, y)` from the forward axis; 0 at the origin.
pub fn heading_channel(p: &Vector3<f64>) -> f64 {
    let n = p.x.hypot(p.y);
    if n == 0.0 {
        0.0
    } else {
        p.x / n
    }
}

pub fn distance_channel(p: &GroundPoint3D, cfg: &EmbeddingConfig) -> f64 {
    (p.x.hypot(p.y) / cfg.max_visible_distance).clamp(0.0, 1.0)
}

pub fn height_channel(ray: &Vector3<f64>, is_satellite: bool, cfg: &EmbeddingConfig) -> f64 {
    if is_satellite {
        cfg.satellite_height_value
    } else {
        ray.z
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EmbeddingView<'a> {
    Ground {
        intrinsics: &'a CameraIntrinsics,
        extrinsics: &'a CameraExtrinsics,
    },
    /// Satellite tile, embedded relative to the initial (anchor) pose.
    Satellite {
        frame: &'a SatelliteFrame,
        anchor: &'a Anchor,
    },
}

pub fn build_embedding(view: &EmbeddingView<'_>, cfg: &EmbeddingConfig) -> Result<EmbeddingMap> {
    cfg.validate()?;
    let (h, w) = match view {
        EmbeddingView::Ground { intrinsics, .. } => (intrinsics.height as usize, intrinsics.width as usize),
        EmbeddingView::Satellite { frame, .. } => (frame.height as usize, frame.width as usize),
    };
    let mut data = vec![0f32; h * w * 3];
    data.par_chunks_mut(w * 3).enumerate().for_each(|(r, row)| {
        for c in 0..w {
            let px = Vector2::new(c as f64, r as f64);
            let [e0, e1, e2] = embed_pixel(view, cfg, &px);
            row[c * 3] = e0 as f32;
            row[c * 3 + 1] = e1 as f32;
            row[c * 3 + 2] = e2 as f32;
        }
    });
    EmbeddingMap::from_grid(Grid::from_vec(h, w, 3, data)?)
}

fn embed_pixel(view: &EmbeddingView<'_>, cfg: &EmbeddingConfig, px: &Vector2<f64>) -> [f64; 3] {
    match view {
        EmbeddingView::Ground { intrinsics, extrinsics } => {
            let ray = inverse_project(intrinsics, &extrinsics.rot_cam_to_vehicle, px);
            let distance = match lift_to_ground(&ray, extrinsics) {
                Ok(p) => distance_channel(&p, cfg),
                Err(_) => 1.0,
            };
            [heading_channel(&ray), distance, height_channel(&ray, false, cfg)]
        }
        EmbeddingView::Satellite { frame, anchor } => {
            let world = frame.pixel_to_world(px);
            let local = PlanarTransform::new(anchor.heading, anchor.position)
                .inverse_apply(&Vector3::new(world.x, world.y, 0.0));
            [
                heading_channel(&local.to_vector()),
                distance_channel(&local, cfg),
                cfg.satellite_height_value,
            ]
        }
    }
}
