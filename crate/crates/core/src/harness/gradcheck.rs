//! Finite-difference checks of every analytic derivative in the crate.

use std::time::{Duration, Instant};

use nalgebra::{Matrix2x3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::FusedPoint;
use crate::geometry::{
    camera_rotation, inverse_project, lift_to_ground, pose_jacobian, pose_to_transform,
    satellite_project, Anchor, CameraExtrinsics, CameraIntrinsics, GroundPoint3D, Pose3DoF,
    SatelliteFrame,
};
use crate::optimizer::{build_system, reprojection_loss, reprojection_loss_gradient, RobustCost, RobustKind, SatelliteLevel, SystemConfig};
use crate::pyramid::{bilinear_lookup, rescale_coord, spatial_gradient, Grid};

/// Maximum relative errors, `|analytic - numeric| / |numeric|` in the
/// Frobenius norm per configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub configs: usize,
    pub pose_jacobian: f64,
    pub residual_chain: f64,
    pub bilinear: f64,
    pub reprojection: f64,
    pub elapsed: Duration,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.pose_jacobian.max(self.residual_chain).max(self.bilinear).max(self.reprojection)
    }
}

const H_POSE: f64 = 1e-6;
const H_PIXEL: f64 = 1e-6;

fn rel(a: f64, b: f64) -> f64 {
    a / b.max(1e-12)
}

/// Random pose, rig, ground point and scale.
struct Config {
    sat: SatelliteFrame,
    anchor: Anchor,
    pose: Pose3DoF,
    point: GroundPoint3D,
}

fn random_config(rng: &mut ChaCha8Rng) -> Config {
    loop {
        let gamma = rng.gen_range(0.1..0.6);
        let sat = SatelliteFrame::new(256, 256, gamma).expect("valid frame");
        let anchor = Anchor::new(
            Vector2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let pose = Pose3DoF::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-0.3..0.3));
        let intr = CameraIntrinsics::new(rng.gen_range(120.0..300.0), rng.gen_range(120.0..300.0), 160.0, 80.0, 320, 160)
            .expect("valid intrinsics");
        let height = rng.gen_range(1.2..2.2);
        let extr = CameraExtrinsics::new(
            camera_rotation(rng.gen_range(-3.1..3.1), rng.gen_range(0.02..0.3)),
            Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0), -height),
            height,
        )
        .expect("valid extrinsics");
        let px = Vector2::new(rng.gen_range(0.0..320.0), rng.gen_range(81.0..160.0));
        let ray = inverse_project(&intr, &extr.rot_cam_to_vehicle, &px);
        let Ok(point) = lift_to_ground(&ray, &extr) else { continue };
        let proj = satellite_project(&sat, &pose_to_transform(&pose, &anchor), &point);
        // keep a margin so the finite-difference stencil stays inside the tile
        let margin = 4.0;
        if proj.pixel.x > margin && proj.pixel.y > margin && proj.pixel.x < 256.0 - margin && proj.pixel.y < 256.0 - margin {
            return Config { sat, anchor, pose, point };
        }
    }
}

fn perturbed(pose: &Pose3DoF, k: usize, h: f64) -> Pose3DoF {
    let mut d = Vector3::zeros();
    d[k] = h;
    Pose3DoF { lateral: pose.lateral + d[0], longitudinal: pose.longitudinal + d[1], yaw: pose.yaw + d[2] }
}

fn check_pose_jacobian(c: &Config) -> f64 {
    let analytic = pose_jacobian(&c.sat, &c.pose, &c.anchor, &c.point);
    let px = |p: &Pose3DoF| satellite_project(&c.sat, &pose_to_transform(p, &c.anchor), &c.point).pixel;
    let mut numeric = Matrix2x3::zeros();
    for k in 0..3 {
        let d = (px(&perturbed(&c.pose, k, H_POSE)) - px(&perturbed(&c.pose, k, -H_POSE))) / (2.0 * H_POSE);
        numeric.set_column(k, &d);
    }
    rel((analytic - numeric).norm(), numeric.norm())
}

fn smooth_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Grid {
    let coeffs: Vec<[f64; 4]> = (0..c)
        .map(|_| [rng.gen_range(0.5..2.0), rng.gen_range(0.02..0.1), rng.gen_range(0.02..0.1), rng.gen_range(0.0..6.0)])
        .collect();
    Grid::from_fn(h, w, c, |r, col, k| {
        let [a, fu, fv, ph] = coeffs[k];
        (a * (fu * col as f64 + ph).sin() * (fv * r as f64 + ph).cos()) as f32
    })
}

fn cell_of(sat: &SatelliteFrame, ratio: f64, c: &Config, pose: &Pose3DoF) -> (i64, i64) {
    let p = satellite_project(sat, &pose_to_transform(pose, &c.anchor), &c.point).pixel;
    (rescale_coord(p.x, ratio).floor() as i64, rescale_coord(p.y, ratio).floor() as i64)
}

/// Residual Jacobian through features, level rescaling and pose Jacobian.
/// Returns `None` when the stencil crosses a bilinear cell boundary.
fn check_residual_chain(c: &Config, features: &Grid, confidence: &Grid) -> Option<f64> {
    let level = SatelliteLevel { frame: &c.sat, features, confidence: confidence.clone() };
    let ratio = features.width() as f64 / c.sat.width as f64;
    let home = cell_of(&c.sat, ratio, c, &c.pose);
    for k in 0..3 {
        for s in [-1.0, 1.0] {
            if cell_of(&c.sat, ratio, c, &perturbed(&c.pose, k, s * H_POSE)) != home {
                return None;
            }
        }
    }
    let point = FusedPoint {
        ground_point: c.point,
        weight: 1.0,
        feature: vec![0.0; features.channels()],
        source_camera: 0,
    };
    let points = vec![point.clone(), point.clone(), point];
    let cfg = SystemConfig { robust: RobustCost { kind: RobustKind::Squared, scale: 1.0 }, irls: false, channels: None };
    let residual = |p: &Pose3DoF| build_system(p, &points, &level, &c.anchor, &cfg).ok().map(|s| s.terms[0].residual.clone());
    let sys = build_system(&c.pose, &points, &level, &c.anchor, &cfg).ok()?;
    let analytic = &sys.terms[0].jacobian;
    let (mut diff, mut norm) = (0.0, 0.0);
    for k in 0..3 {
        let plus = residual(&perturbed(&c.pose, k, H_POSE))?;
        let minus = residual(&perturbed(&c.pose, k, -H_POSE))?;
        for ch in 0..plus.len() {
            let fd = (plus[ch] - minus[ch]) / (2.0 * H_POSE);
            diff += (fd - analytic[ch][k]).powi(2);
            norm += fd * fd;
        }
    }
    Some(rel(diff.sqrt(), norm.sqrt()))
}

fn check_bilinear(map: &Grid, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let p = Vector2::new(
            rng.gen_range(0.0..(map.width() - 1) as f64),
            rng.gen_range(0.0..(map.height() - 1) as f64),
        );
        let (fu, fv) = (p.x.fract(), p.y.fract());
        if !(0.01..0.99).contains(&fu) || !(0.01..0.99).contains(&fv) {
            continue;
        }
        let g = spatial_gradient(map, &p);
        let at = |q: Vector2<f64>| bilinear_lookup(map, &q).value;
        let pu = at(p + Vector2::new(H_PIXEL, 0.0));
        let mu = at(p - Vector2::new(H_PIXEL, 0.0));
        let pv = at(p + Vector2::new(0.0, H_PIXEL));
        let mv = at(p - Vector2::new(0.0, H_PIXEL));
        let (mut diff, mut norm) = (0.0, 0.0);
        for k in 0..map.channels() {
            let du = (pu[k] - mu[k]) / (2.0 * H_PIXEL);
            let dv = (pv[k] - mv[k]) / (2.0 * H_PIXEL);
            diff += (du - g.du[k]).powi(2) + (dv - g.dv[k]).powi(2);
            norm += du * du + dv * dv;
        }
        return rel(diff.sqrt(), norm.sqrt());
    }
}

fn check_reprojection(c: &Config, rng: &mut ChaCha8Rng) -> f64 {
    let points: Vec<GroundPoint3D> = (0..8)
        .map(|_| GroundPoint3D::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), 0.0))
        .collect();
    let gt = Pose3DoF::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-0.3..0.3));
    let g = reprojection_loss_gradient(&c.pose, &gt, &points, &c.sat, &c.anchor);
    let f = |p: &Pose3DoF| reprojection_loss(p, &gt, &points, &c.sat, &c.anchor);
    let h = 1e-5;
    let numeric = Vector3::from_fn(|k, _| (f(&perturbed(&c.pose, k, h)) - f(&perturbed(&c.pose, k, -h))) / (2.0 * h));
    rel((g - numeric).norm(), numeric.norm())
}

/// Runs `configs` random configurations of each check.
pub fn gradient_check(configs: usize, seed: u64) -> Result<GradCheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = smooth_map(&mut rng, 128, 128, 4);
    let confidence = Grid::from_fn(128, 128, 1, |_, _, _| rng.gen_range(0.1..1.0));
    let mut report = GradCheckReport {
        configs,
        pose_jacobian: 0.0,
        residual_chain: 0.0,
        bilinear: 0.0,
        reprojection: 0.0,
        elapsed: Duration::ZERO,
    };
    let mut chain_done = 0;
    while chain_done < configs {
        let c = random_config(&mut rng);
        if let Some(e) = check_residual_chain(&c, &features, &confidence) {
            report.residual_chain = report.residual_chain.max(e);
            chain_done += 1;
        }
    }
    for _ in 0..configs {
        let c = random_config(&mut rng);
        report.pose_jacobian = report.pose_jacobian.max(check_pose_jacobian(&c));
        report.bilinear = report.bilinear.max(check_bilinear(&features, &mut rng));
        report.reprojection = report.reprojection.max(check_reprojection(&c, &mut rng));
    }
    report.elapsed = start.elapsed();
    Ok(report)
}
