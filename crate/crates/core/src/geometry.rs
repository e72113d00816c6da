//! Frames, camera models and the 3-DoF pose parametrization.
//!
//! Frames used throughout the crate:
//!
//! - vehicle ground frame: x forward, y right, z down, origin on the ground
//!   plane under the vehicle reference point;
//! - satellite world frame: x East (+u), y South (+v), z down, origin at the
//!   satellite image center, in meters;
//! - satellite pixels: `u = x / gamma + center_u`, `v = y / gamma + center_v`.
//!
//! Headings are compass angles in radians: 0 faces North, `pi/2` faces East.
//! A [`Pose3DoF`] is a perturbation expressed in the vehicle frame of the
//! [`Anchor`] (the coarse initial placement), composed on its right.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Web-mercator meters-per-pixel at the equator for zoom 0.
pub const EARTH_MPP_ZOOM0: f64 = 156543.03392;

/// Rays with a down component at or below this value do not hit the ground.
pub const HORIZON_EPS: f64 = 1e-3;

/// Slack in pixels for points that should sit exactly on an image edge.
pub const EDGE_TOLERANCE: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose3DoF {
    /// Shift along the anchor's right axis, meters.
    pub lateral: f64,
    /// Shift along the anchor's forward axis, meters.
    pub longitudinal: f64,
    /// Heading offset, radians, wrapped to `(-pi, pi]`.
    pub yaw: f64,
}

impl Pose3DoF {
    pub fn new(lateral: f64, longitudinal: f64, yaw: f64) -> Self {
        Self {
            lateral,
            longitudinal,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn from_degrees(lateral: f64, longitudinal: f64, yaw_deg: f64) -> Self {
        Self::new(lateral, longitudinal, yaw_deg.to_radians())
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.lateral.is_finite() && self.longitudinal.is_finite() && self.yaw.is_finite()
    }

    /// Applies an additive `(lateral, longitudinal, yaw)` update.
    pub fn apply_delta(&self, delta: &Vector3<f64>) -> Self {
        Self::new(
            self.lateral + delta[0],
            self.longitudinal + delta[1],
            self.yaw + delta[2],
        )
    }

    pub fn yaw_degrees(&self) -> f64 {
        self.yaw.to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::Config(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixels up to `EDGE_TOLERANCE` outside the left/top edge still count,
    /// so round-off on a lifted border pixel does not lose it.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -EDGE_TOLERANCE
            && pixel.y >= -EDGE_TOLERANCE
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rot_cam_to_vehicle: Matrix3<f64>,
    pub trans_cam_to_vehicle: Vector3<f64>,
    /// Height of the optical center above the ground plane, meters.
    pub cam_height: f64,
}

impl CameraExtrinsics {
    pub fn new(rot: Matrix3<f64>, trans: Vector3<f64>, cam_height: f64) -> Result<Self> {
        let ortho = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (rot.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "camera rotation is not a proper rotation (orthogonality error {ortho:e})"
            )));
        }
        if !(cam_height > 0.0) {
            return Err(Error::Config(format!("camera height must be positive, got {cam_height}")));
        }
        Ok(Self {
            rot_cam_to_vehicle: rot,
            trans_cam_to_vehicle: trans,
            cam_height,
        })
    }

    /// Optical center in the vehicle ground frame. The down coordinate is
    /// always `-cam_height`, whatever the translation's z says.
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            self.trans_cam_to_vehicle.x,
            self.trans_cam_to_vehicle.y,
            -self.cam_height,
        )
    }
}

/// Camera axes (x right, y down, z optical) to vehicle axes for a camera
/// mounted at compass-style `yaw` (0 = forward, `pi/2` = right) and pitched
/// down by `pitch` radians.
pub fn camera_rotation(yaw: f64, pitch: f64) -> Matrix3<f64> {
    // Level camera facing forward: optical z -> x, image x -> y, image y -> z.
    let base = Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let (sp, cp) = pitch.sin_cos();
    // Pitch about the camera x axis, positive tilts the optical axis down.
    let pitch_rot = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, sp, 0.0, -sp, cp);
    let (sy, cy) = yaw.sin_cos();
    let yaw_rot = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    yaw_rot * base * pitch_rot
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    name: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    rot_cam_to_vehicle: [f64; 9],
    trans_cam_to_vehicle: [f64; 3],
    cam_height: f64,
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Parses the rig JSON: an array of camera records with a row-major
    /// `rot_cam_to_vehicle`.
    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<CameraRecord> = serde_json::from_str(text)?;
        let cameras = records
            .into_iter()
            .map(|r| {
                let intrinsics = CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)?;
                let rot = Matrix3::from_row_slice(&r.rot_cam_to_vehicle);
                let extrinsics = CameraExtrinsics::new(
                    rot,
                    Vector3::from_column_slice(&r.trans_cam_to_vehicle),
                    r.cam_height,
                )?;
                Ok(Camera { name: r.name, intrinsics, extrinsics })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cameras })
    }

    pub fn to_json(&self) -> String {
        let records: Vec<CameraRecord> = self
            .cameras
            .iter()
            .map(|c| {
                let r = &c.extrinsics.rot_cam_to_vehicle;
                let mut rot = [0.0; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        rot[i * 3 + j] = r[(i, j)];
                    }
                }
                let t = &c.extrinsics.trans_cam_to_vehicle;
                CameraRecord {
                    name: c.name.clone(),
                    fx: c.intrinsics.fx,
                    fy: c.intrinsics.fy,
                    cx: c.intrinsics.cx,
                    cy: c.intrinsics.cy,
                    width: c.intrinsics.width,
                    height: c.intrinsics.height,
                    rot_cam_to_vehicle: rot,
                    trans_cam_to_vehicle: [t.x, t.y, t.z],
                    cam_height: c.extrinsics.cam_height,
                }
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("rig serialization")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoReference {
    pub latitude: f64,
    pub zoom: u32,
    pub scale: u32,
}

/// Parallel-projection camera of a north-up satellite tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteFrame {
    pub center_u: f64,
    pub center_v: f64,
    /// Meters per pixel.
    pub gamma: f64,
    pub width: u32,
    pub height: u32,
    pub geo: Option<GeoReference>,
}

impl SatelliteFrame {
    pub fn new(width: u32, height: u32, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self {
            center_u: width as f64 / 2.0,
            center_v: height as f64 / 2.0,
            gamma,
            width,
            height,
            geo: None,
        })
    }

    pub fn with_geo(width: u32, height: u32, geo: GeoReference) -> Result<Self> {
        let gamma = meters_per_pixel(geo.latitude, geo.zoom, geo.scale)?;
        Ok(Self { geo: Some(geo), ..Self::new(width, height, gamma)? })
    }

    pub fn world_to_pixel(&self, world: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            world.x / self.gamma + self.center_u,
            world.y / self.gamma + self.center_v,
        )
    }

    pub fn pixel_to_world(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (pixel.x - self.center_u) * self.gamma,
            (pixel.y - self.center_v) * self.gamma,
        )
    }

    /// Pixels up to `EDGE_TOLERANCE` outside the left/top edge still count,
    /// so round-off on a lifted border pixel does not lose it.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -EDGE_TOLERANCE
            && pixel.y >= -EDGE_TOLERANCE
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// World placement of the coarse initial pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    /// Satellite-world position, meters (East, South).
    pub position: Vector2<f64>,
    /// Compass heading, radians (0 = North, `pi/2` = East).
    pub heading: f64,
}

impl Anchor {
    pub fn new(position: Vector2<f64>, heading: f64) -> Self {
        Self { position, heading }
    }

    pub fn from_pixel(sat: &SatelliteFrame, pixel: Vector2<f64>, heading_deg: f64) -> Self {
        Self::new(sat.pixel_to_world(&pixel), heading_deg.to_radians())
    }

    pub fn pixel(&self, sat: &SatelliteFrame) -> Vector2<f64> {
        sat.world_to_pixel(&self.position)
    }
}

/// Satellite sidecar JSON. Either `gamma` or the geo triple must be set; if
/// both are, they must agree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SatelliteMetadata {
    pub center_u: f64,
    pub center_v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<u32>,
    pub width: u32,
    pub height: u32,
    pub anchor_heading_deg: f64,
    pub anchor_pixel: [f64; 2],
}

impl SatelliteMetadata {
    pub fn from_frame(sat: &SatelliteFrame, anchor: &Anchor) -> Self {
        let px = anchor.pixel(sat);
        Self {
            center_u: sat.center_u,
            center_v: sat.center_v,
            gamma: Some(sat.gamma),
            latitude: sat.geo.map(|g| g.latitude),
            zoom: sat.geo.map(|g| g.zoom),
            scale: sat.geo.map(|g| g.scale),
            width: sat.width,
            height: sat.height,
            anchor_heading_deg: anchor.heading.to_degrees(),
            anchor_pixel: [px.x, px.y],
        }
    }

    pub fn resolve(&self) -> Result<(SatelliteFrame, Anchor)> {
        let geo = match (self.latitude, self.zoom, self.scale) {
            (Some(latitude), Some(zoom), Some(scale)) => Some(GeoReference { latitude, zoom, scale }),
            (None, None, None) => None,
            _ => {
                return Err(Error::Config(
                    "latitude, zoom and scale must be given together".into(),
                ))
            }
        };
        let gamma = match (self.gamma, geo) {
            (Some(g), Some(geo)) => {
                let derived = meters_per_pixel(geo.latitude, geo.zoom, geo.scale)?;
                if ((g - derived) / derived).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "gamma {g} disagrees with geo metadata ({derived})"
                    )));
                }
                g
            }
            (Some(g), None) => g,
            (None, Some(geo)) => meters_per_pixel(geo.latitude, geo.zoom, geo.scale)?,
            (None, None) => {
                return Err(Error::Config("satellite metadata needs gamma or latitude/zoom/scale".into()))
            }
        };
        let mut sat = SatelliteFrame::new(self.width, self.height, gamma)?;
        sat.center_u = self.center_u;
        sat.center_v = self.center_v;
        sat.geo = geo;
        let anchor = Anchor::from_pixel(
            &sat,
            Vector2::new(self.anchor_pixel[0], self.anchor_pixel[1]),
            self.anchor_heading_deg,
        );
        Ok((sat, anchor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundPoint3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GroundPoint3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Web-mercator ground resolution of a tile.
pub fn meters_per_pixel(latitude: f64, zoom: u32, scale: u32) -> Result<f64> {
    if !(latitude.abs() < 90.0) {
        return Err(Error::Domain(format!("latitude {latitude} outside (-90, 90)")));
    }
    if scale < 1 {
        return Err(Error::Domain("scale must be at least 1".into()));
    }
    let denom = 2f64.powi(zoom as i32) * scale as f64;
    Ok(EARTH_MPP_ZOOM0 * (latitude * PI / 180.0).cos() / denom)
}

/// Back-projects a pixel to a vehicle-oriented ray `R * K^-1 * (u, v, 1)`.
/// The ray is not normalized.
pub fn inverse_project(
    intr: &CameraIntrinsics,
    rot_cam_to_vehicle: &Matrix3<f64>,
    pixel: &Vector2<f64>,
) -> Vector3<f64> {
    let cam = Vector3::new(
        (pixel.x - intr.cx) / intr.fx,
        (pixel.y - intr.cy) / intr.fy,
        1.0,
    );
    rot_cam_to_vehicle * cam
}

/// Intersects a vehicle-oriented ray from the camera with the ground plane.
pub fn lift_to_ground(ray: &Vector3<f64>, extr: &CameraExtrinsics) -> Result<GroundPoint3D> {
    if !(ray.z > HORIZON_EPS) {
        return Err(Error::Horizon { ray_z: ray.z });
    }
    let s = extr.cam_height / ray.z;
    let t = &extr.trans_cam_to_vehicle;
    Ok(GroundPoint3D::new(s * ray.x + t.x, s * ray.y + t.y, 0.0))
}

/// Rotation taking vehicle-frame `(forward, right)` to satellite-world
/// `(East, South)` for a compass heading.
pub fn heading_rotation(heading: f64) -> Matrix2<f64> {
    let (s, c) = heading.sin_cos();
    Matrix2::new(s, c, -c, s)
}

fn heading_rotation_derivative(heading: f64) -> Matrix2<f64> {
    let (s, c) = heading.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Vehicle frame to satellite world: planar rigid motion, down axis kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarTransform {
    pub heading: f64,
    pub position: Vector2<f64>,
    rotation: Matrix2<f64>,
}

impl PlanarTransform {
    pub fn new(heading: f64, position: Vector2<f64>) -> Self {
        Self {
            heading,
            position,
            rotation: heading_rotation(heading),
        }
    }

    pub fn rotation(&self) -> &Matrix2<f64> {
        &self.rotation
    }

    pub fn apply(&self, p: &GroundPoint3D) -> Vector3<f64> {
        let xy = self.rotation * Vector2::new(p.x, p.y) + self.position;
        Vector3::new(xy.x, xy.y, p.z)
    }

    /// World to vehicle frame.
    pub fn inverse_apply(&self, w: &Vector3<f64>) -> GroundPoint3D {
        let xy = self.rotation.transpose() * (Vector2::new(w.x, w.y) - self.position);
        GroundPoint3D::new(xy.x, xy.y, w.z)
    }
}

pub fn pose_to_transform(pose: &Pose3DoF, anchor: &Anchor) -> PlanarTransform {
    let offset = heading_rotation(anchor.heading) * Vector2::new(pose.longitudinal, pose.lateral);
    PlanarTransform::new(anchor.heading + pose.yaw, anchor.position + offset)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteProjection {
    pub pixel: Vector2<f64>,
    pub in_image: bool,
}

pub fn satellite_project(
    sat: &SatelliteFrame,
    transform: &PlanarTransform,
    point: &GroundPoint3D,
) -> SatelliteProjection {
    let w = transform.apply(point);
    let pixel = sat.world_to_pixel(&Vector2::new(w.x, w.y));
    SatelliteProjection {
        pixel,
        in_image: sat.contains(&pixel),
    }
}

/// Derivative of the satellite pixel of `point` with respect to
/// `(lateral, longitudinal, yaw)`.
pub fn pose_jacobian(
    sat: &SatelliteFrame,
    pose: &Pose3DoF,
    anchor: &Anchor,
    point: &GroundPoint3D,
) -> Matrix2x3<f64> {
    let inv_gamma = 1.0 / sat.gamma;
    let base = heading_rotation(anchor.heading);
    let d_lat = base.column(1) * inv_gamma;
    let d_lon = base.column(0) * inv_gamma;
    let d_yaw = heading_rotation_derivative(anchor.heading + pose.yaw)
        * Vector2::new(point.x, point.y)
        * inv_gamma;
    Matrix2x3::from_columns(&[d_lat, d_lon, d_yaw])
}
