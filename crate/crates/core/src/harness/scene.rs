//! Synthetic scenes: a textured ground plane seen from above and through a
//! camera rig, with optional off-ground boxes occluding the ground views.
//!
//! Ground views are rendered by lifting every pixel onto the ground plane,
//! placing it in the world with the ground-truth pose and sampling the
//! satellite texture there, so on-ground pixels agree with the satellite
//! image exactly.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::{GrayImage, ImageBuffer, Luma};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    camera_rotation, inverse_project, lift_to_ground, pose_to_transform, Anchor, Camera,
    CameraExtrinsics, CameraIntrinsics, CameraRig, PlanarTransform, Pose3DoF, SatelliteFrame,
    SatelliteMetadata,
};
use crate::pyramid::Grid;

/// Intensity written where a ground ray leaves the satellite tile.
pub const OUTSIDE_TILE: f32 = 0.5;
/// Intensity of pixels above the horizon.
pub const SKY: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    #[default]
    Blobs,
    Checker,
    Roadmarks,
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "checker" => Ok(Self::Checker),
            "roadmarks" => Ok(Self::Roadmarks),
            other => Err(Error::Config(format!("unknown texture {other:?}"))),
        }
    }
}

impl fmt::Display for TextureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Blobs => "blobs",
            Self::Checker => "checker",
            Self::Roadmarks => "roadmarks",
        })
    }
}

/// Off-ground boxes placed around the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistractorSpec {
    pub count: usize,
    /// Footprint half-size range, meters.
    pub half_size: (f64, f64),
    /// Box height range, meters.
    pub height: (f64, f64),
    /// Distance range from the vehicle, meters.
    pub distance: (f64, f64),
}

impl Default for DistractorSpec {
    fn default() -> Self {
        Self { count: 4, half_size: (0.4, 1.2), height: (1.0, 3.0), distance: (5.0, 14.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub texture: TextureKind,
    /// Satellite tile side, pixels.
    pub satellite_size: u32,
    pub gamma: f64,
    pub rig: CameraRig,
    pub distractors: DistractorSpec,
    /// Ground-truth offset from the anchor is drawn uniformly within
    /// `(meters, degrees)`.
    pub gt_jitter: (f64, f64),
}

impl SceneSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            texture: TextureKind::Blobs,
            satellite_size: 512,
            gamma: 0.2,
            rig: four_camera_rig(),
            distractors: DistractorSpec::default(),
            gt_jitter: (1.0, 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rig.is_empty() {
            return Err(Error::Config("scene needs at least one camera".into()));
        }
        if self.satellite_size < 16 || !(self.gamma > 0.0) {
            return Err(Error::Config("satellite tile too small or gamma not positive".into()));
        }
        for cam in &self.rig.cameras {
            if cam.extrinsics.trans_cam_to_vehicle.z > 0.0 {
                return Err(Error::Config(format!("camera {} is below the ground plane", cam.name)));
            }
        }
        let d = &self.distractors;
        if d.half_size.0 > d.half_size.1 || d.height.0 > d.height.1 || d.distance.0 > d.distance.1 {
            return Err(Error::Config("distractor ranges must be ordered".into()));
        }
        if d.count > 0 && d.distance.0 <= d.half_size.1 + 1.5 {
            return Err(Error::Config("distractors may enclose the vehicle".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box standing on the ground, world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distractor {
    pub center: Vector2<f64>,
    pub half_size: Vector2<f64>,
    pub height: f64,
    pub shade: f64,
}

impl Distractor {
    /// Entry distance along `dir` from `origin`, if the ray hits the box.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let lo = Vector3::new(self.center.x - self.half_size.x, self.center.y - self.half_size.y, -self.height);
        let hi = Vector3::new(self.center.x + self.half_size.x, self.center.y + self.half_size.y, 0.0);
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if origin[k] < lo[k] || origin[k] > hi[k] {
                    return None;
                }
                continue;
            }
            let a = (lo[k] - origin[k]) / dir[k];
            let b = (hi[k] - origin[k]) / dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some(t0)
    }

    fn shade_at(&self, p: &Vector3<f64>) -> f32 {
        // horizontal bands so boxes carry strong edges
        let band = ((-p.z / 0.35).floor() as i64).rem_euclid(2) as f64;
        (self.shade + 0.15 * band).clamp(0.0, 1.0) as f32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Single-channel satellite intensity in `[0, 1]`.
    pub satellite: Grid,
    pub frame: SatelliteFrame,
    pub anchor: Anchor,
    pub rig: CameraRig,
    pub ground_images: Vec<Grid>,
    /// 1 on visible ground, 0 on distractors and sky.
    pub masks: Vec<Grid>,
    pub gt: Pose3DoF,
    pub distractors: Vec<Distractor>,
}

pub fn camera_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(160.0, 160.0, 160.0, 80.0, 320, 160).expect("valid intrinsics")
}

const CAM_HEIGHT: f64 = 1.6;
const CAM_PITCH_DEG: f64 = 5.0;

fn rig_camera(name: &str, yaw_deg: f64, x: f64, y: f64) -> Camera {
    Camera {
        name: name.into(),
        intrinsics: camera_intrinsics(),
        extrinsics: CameraExtrinsics::new(
            camera_rotation(yaw_deg.to_radians(), CAM_PITCH_DEG.to_radians()),
            Vector3::new(x, y, -CAM_HEIGHT),
            CAM_HEIGHT,
        )
        .expect("valid extrinsics"),
    }
}

/// Forward-facing camera, 90 degree horizontal field of view.
pub fn front_camera() -> Camera {
    rig_camera("front", 0.0, 1.0, 0.0)
}

/// Front, left, right and rear cameras; front first.
pub fn four_camera_rig() -> CameraRig {
    CameraRig {
        cameras: vec![
            front_camera(),
            rig_camera("left", -90.0, 0.0, -0.8),
            rig_camera("right", 90.0, 0.0, 0.8),
            rig_camera("rear", 180.0, -1.0, 0.0),
        ],
    }
}

fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0) as f32
}

fn gaussian_blobs(rng: &mut ChaCha8Rng, frame: &SatelliteFrame, octaves: &[(f64, f64)]) -> Vec<f64> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let area = w as f64 * h as f64 * frame.gamma * frame.gamma;
    let mut acc = vec![0.0f64; w * h];
    for &(sigma, amp) in octaves {
        let count = (area / (2.0 * sigma).powi(2)).ceil() as usize;
        let sp = sigma / frame.gamma;
        let reach = (3.0 * sp).ceil() as i64;
        for _ in 0..count {
            let cu = rng.gen_range(0.0..w as f64);
            let cv = rng.gen_range(0.0..h as f64);
            let a = amp * rng.gen_range(-1.0..1.0);
            let (iu, iv) = (cu as i64, cv as i64);
            for r in (iv - reach).max(0)..(iv + reach + 1).min(h as i64) {
                let dv = r as f64 - cv;
                for c in (iu - reach).max(0)..(iu + reach + 1).min(w as i64) {
                    let du = c as f64 - cu;
                    acc[r as usize * w + c as usize] += a * (-(du * du + dv * dv) / (2.0 * sp * sp)).exp();
                }
            }
        }
    }
    acc
}

fn normalize_into(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let (mn, mx) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = mx - mn;
    values
        .iter()
        .map(|&v| if range > 0.0 { lo + (hi - lo) * (v - mn) / range } else { 0.5 * (lo + hi) })
        .collect()
}

/// Satellite intensity, quantized to 16 bits so it survives a PNG round trip.
pub fn satellite_texture(kind: TextureKind, frame: &SatelliteFrame, rng: &mut ChaCha8Rng) -> Grid {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let values = match kind {
        TextureKind::Blobs => {
            let raw = gaussian_blobs(rng, frame, &[(16.0, 1.0), (8.0, 0.6), (4.0, 0.35), (2.0, 0.2)]);
            normalize_into(&raw, 0.05, 0.95)
        }
        TextureKind::Checker => {
            let cell = 2.0;
            let (ox, oy) = (rng.gen_range(0.0..cell), rng.gen_range(0.0..cell));
            (0..w * h)
                .map(|i| {
                    let p = frame.pixel_to_world(&Vector2::new((i % w) as f64, (i / w) as f64));
                    let a = ((p.x + ox) / cell).floor() as i64 + ((p.y + oy) / cell).floor() as i64;
                    if a.rem_euclid(2) == 0 { 0.25 } else { 0.75 }
                })
                .collect()
        }
        TextureKind::Roadmarks => {
            let noise = normalize_into(&gaussian_blobs(rng, frame, &[(2.0, 1.0)]), -0.05, 0.05);
            let dir = rng.gen_range(0.0..std::f64::consts::PI);
            let (s, c) = dir.sin_cos();
            let offset = rng.gen_range(0.0..3.5);
            (0..w * h)
                .map(|i| {
                    let p = frame.pixel_to_world(&Vector2::new((i % w) as f64, (i / w) as f64));
                    let across = p.x * c + p.y * s + offset;
                    let along = -p.x * s + p.y * c;
                    let lane = (across / 3.5 - (across / 3.5).round()).abs() * 3.5 < 0.08;
                    let dash = along.rem_euclid(6.0) < 3.0;
                    let base = 0.3 + noise[i];
                    if lane && dash { 0.9 } else { base }
                })
                .collect()
        }
    };
    Grid::from_vec(h, w, 1, values.into_iter().map(quantize).collect()).expect("texture shape")
}

/// Renders one camera at the world placement `vehicle`. Returns the image
/// and the on-ground mask.
pub fn render_ground_view(
    satellite: &Grid,
    frame: &SatelliteFrame,
    vehicle: &PlanarTransform,
    camera: &Camera,
    distractors: &[Distractor],
) -> (Grid, Grid) {
    let intr = &camera.intrinsics;
    let extr = &camera.extrinsics;
    let (w, h) = (intr.width as usize, intr.height as usize);
    let origin = {
        let c = extr.center();
        let xy = vehicle.rotation() * Vector2::new(c.x, c.y) + vehicle.position;
        Vector3::new(xy.x, xy.y, c.z)
    };
    let pixels: Vec<(f32, f32)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let px = Vector2::new((i % w) as f64, (i / w) as f64);
            let ray = inverse_project(intr, &extr.rot_cam_to_vehicle, &px);
            let dxy = vehicle.rotation() * Vector2::new(ray.x, ray.y);
            let dir = Vector3::new(dxy.x, dxy.y, ray.z);
            let ground = lift_to_ground(&ray, extr).ok();
            let t_ground = if ground.is_some() { extr.cam_height / ray.z } else { f64::INFINITY };
            let hit = distractors
                .iter()
                .filter_map(|d| d.intersect(&origin, &dir).map(|t| (t, d)))
                .filter(|(t, _)| *t < t_ground)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((t, d)) = hit {
                return (quantize(d.shade_at(&(origin + t * dir)) as f64), 0.0);
            }
            match ground {
                Some(p) => {
                    let world = vehicle.apply(&p);
                    let sp = frame.world_to_pixel(&Vector2::new(world.x, world.y));
                    let mut v = [0.0];
                    let value = if satellite.lookup_into(&sp, &mut v) { v[0] } else { OUTSIDE_TILE as f64 };
                    // quantized like the satellite so PNG round trips are exact
                    (quantize(value), 1.0)
                }
                None => (quantize(SKY as f64), 0.0),
            }
        })
        .collect();
    let image = Grid::from_vec(h, w, 1, pixels.iter().map(|p| p.0).collect()).expect("render shape");
    let mask = Grid::from_vec(h, w, 1, pixels.iter().map(|p| p.1).collect()).expect("render shape");
    (image, mask)
}

pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frame = SatelliteFrame::new(spec.satellite_size, spec.satellite_size, spec.gamma)?;
    let satellite = satellite_texture(spec.texture, &frame, &mut rng);
    let anchor = Anchor::new(Vector2::zeros(), rng.gen_range(0.0..360f64).to_radians());
    let (jm, jd) = spec.gt_jitter;
    let gt = Pose3DoF::from_degrees(
        rng.gen_range(-jm..=jm),
        rng.gen_range(-jm..=jm),
        rng.gen_range(-jd..=jd),
    );
    let vehicle = pose_to_transform(&gt, &anchor);
    let d = &spec.distractors;
    let distractors: Vec<Distractor> = (0..d.count)
        .map(|_| {
            let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
            let dist = rng.gen_range(d.distance.0..=d.distance.1);
            let local = crate::geometry::GroundPoint3D::new(dist * bearing.cos(), dist * bearing.sin(), 0.0);
            let w = vehicle.apply(&local);
            Distractor {
                center: Vector2::new(w.x, w.y),
                half_size: Vector2::new(
                    rng.gen_range(d.half_size.0..=d.half_size.1),
                    rng.gen_range(d.half_size.0..=d.half_size.1),
                ),
                height: rng.gen_range(d.height.0..=d.height.1),
                shade: rng.gen_range(0.1..0.7),
            }
        })
        .collect();
    let (ground_images, masks) = spec
        .rig
        .cameras
        .iter()
        .map(|cam| render_ground_view(&satellite, &frame, &vehicle, cam, &distractors))
        .unzip();
    Ok(Scene { satellite, frame, anchor, rig: spec.rig.clone(), ground_images, masks, gt, distractors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtPoseRecord {
    pub lateral: f64,
    pub longitudinal: f64,
    pub yaw_deg: f64,
}

impl From<Pose3DoF> for GtPoseRecord {
    fn from(p: Pose3DoF) -> Self {
        Self { lateral: p.lateral, longitudinal: p.longitudinal, yaw_deg: p.yaw_degrees() }
    }
}

impl From<GtPoseRecord> for Pose3DoF {
    fn from(r: GtPoseRecord) -> Self {
        Pose3DoF::from_degrees(r.lateral, r.longitudinal, r.yaw_deg)
    }
}

fn save_png16(grid: &Grid, path: &Path) -> Result<()> {
    let data: Vec<u16> = grid.data().iter().map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, data)
        .ok_or_else(|| Error::Config("image buffer size".into()))?;
    img.save(path)?;
    Ok(())
}

fn save_mask(grid: &Grid, path: &Path) -> Result<()> {
    let data: Vec<u8> = grid.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(grid.width() as u32, grid.height() as u32, data)
        .ok_or_else(|| Error::Config("image buffer size".into()))?;
    img.save(path)?;
    Ok(())
}

/// Loads any PNG as single-channel intensity in `[0, 1]`.
pub fn load_intensity(path: &Path) -> Result<Grid> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| (v as f64 / 65535.0) as f32).collect();
    Grid::from_vec(h as usize, w as usize, 1, data)
}

fn load_mask(path: &Path) -> Result<Grid> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    Grid::from_vec(h as usize, w as usize, 1, data)
}

/// Writes `satellite.png`, `satellite.json`, `rig.json`, `gt_pose.json` and
/// `cam_<name>.png` / `mask_<name>.png` per camera.
pub fn write_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_png16(&scene.satellite, &dir.join("satellite.png"))?;
    let meta = SatelliteMetadata::from_frame(&scene.frame, &scene.anchor);
    fs::write(dir.join("satellite.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    fs::write(dir.join("rig.json"), scene.rig.to_json() + "\n")?;
    fs::write(dir.join("gt_pose.json"), serde_json::to_string_pretty(&GtPoseRecord::from(scene.gt))? + "\n")?;
    for ((cam, img), mask) in scene.rig.cameras.iter().zip(&scene.ground_images).zip(&scene.masks) {
        save_png16(img, &dir.join(format!("cam_{}.png", cam.name)))?;
        save_mask(mask, &dir.join(format!("mask_{}.png", cam.name)))?;
    }
    Ok(())
}

/// Reads a scene directory. Masks are optional (all ones when absent) and so
/// is the ground-truth pose (identity when absent). Distractor geometry is
/// not stored.
pub fn read_scene(dir: impl AsRef<Path>) -> Result<Scene> {
    let dir = dir.as_ref();
    let meta: SatelliteMetadata = serde_json::from_str(&fs::read_to_string(dir.join("satellite.json"))?)?;
    let (frame, anchor) = meta.resolve()?;
    let satellite = load_intensity(&dir.join("satellite.png"))?;
    if (satellite.width() as u32, satellite.height() as u32) != (frame.width, frame.height) {
        return Err(Error::Config(format!(
            "satellite.png is {}x{}, metadata says {}x{}",
            satellite.width(),
            satellite.height(),
            frame.width,
            frame.height
        )));
    }
    let rig = CameraRig::from_json(&fs::read_to_string(dir.join("rig.json"))?)?;
    let gt_path = dir.join("gt_pose.json");
    let gt = if gt_path.exists() {
        serde_json::from_str::<GtPoseRecord>(&fs::read_to_string(gt_path)?)?.into()
    } else {
        Pose3DoF::identity()
    };
    let mut ground_images = Vec::with_capacity(rig.len());
    let mut masks = Vec::with_capacity(rig.len());
    for cam in &rig.cameras {
        let img = load_intensity(&dir.join(format!("cam_{}.png", cam.name)))?;
        if (img.width() as u32, img.height() as u32) != (cam.intrinsics.width, cam.intrinsics.height) {
            return Err(Error::Config(format!("cam_{}.png does not match the rig intrinsics", cam.name)));
        }
        let mask_path = dir.join(format!("mask_{}.png", cam.name));
        let mask = if mask_path.exists() { load_mask(&mask_path)? } else { Grid::filled(img.height(), img.width(), 1, 1.0) };
        if mask.shape() != img.shape() {
            return Err(Error::Config(format!("mask_{}.png does not match its image", cam.name)));
        }
        ground_images.push(img);
        masks.push(mask);
    }
    Ok(Scene { satellite, frame, anchor, rig, ground_images, masks, gt, distractors: Vec::new() })
}
