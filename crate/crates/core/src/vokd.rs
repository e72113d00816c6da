//! View-consistent on-ground keypoint detection.
//!
//! Confidence levels are fused into one map at the finest resolution, the
//! region at or above the principal-point row is masked out, each
//! `patch x patch` block keeps its best cell, and the global top-K cells are
//! lifted onto the ground plane.

use std::io::Write;

use nalgebra::Vector2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{inverse_project, lift_to_ground, CameraExtrinsics, CameraIntrinsics, GroundPoint3D};
use crate::pyramid::{rescale_coord, FeaturePyramid, Grid, PyramidLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VokdConfig {
    pub max_keypoints: usize,
    pub patch: usize,
}

impl Default for VokdConfig {
    fn default() -> Self {
        Self { max_keypoints: 256, patch: 8 }
    }
}

/// Sum over levels of the normalized, upsampled `V * O` maps, kept in
/// double precision at the finest level's resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedConfidence {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FusedConfidence {
    pub fn from_grid(g: &Grid) -> Self {
        Self { height: g.height(), width: g.width(), values: g.data().iter().map(|&v| v as f64).collect() }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

fn normalized_product(level: &PyramidLevel) -> Vec<f64> {
    let prod: Vec<f64> = level
        .view_consistent
        .data()
        .iter()
        .zip(level.on_ground.data())
        .map(|(&v, &o)| v as f64 * o as f64)
        .collect();
    let lo = prod.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = prod.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; prod.len()];
    }
    prod.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Center-aligned bilinear resize with edge clamping.
fn resize(src: &[f64], sh: usize, sw: usize, h: usize, w: usize) -> Vec<f64> {
    if (sh, sw) == (h, w) {
        return src.to_vec();
    }
    let (ru, rv) = (sw as f64 / w as f64, sh as f64 / h as f64);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let v = rescale_coord(r as f64, rv).clamp(0.0, (sh - 1) as f64);
        let r0 = (v.floor() as usize).min(sh.saturating_sub(2));
        let r1 = (r0 + 1).min(sh - 1);
        let b = v - r0 as f64;
        for c in 0..w {
            let u = rescale_coord(c as f64, ru).clamp(0.0, (sw - 1) as f64);
            let c0 = (u.floor() as usize).min(sw.saturating_sub(2));
            let c1 = (c0 + 1).min(sw - 1);
            let a = u - c0 as f64;
            let top = (1.0 - a) * src[r0 * sw + c0] + a * src[r0 * sw + c1];
            let bottom = (1.0 - a) * src[r1 * sw + c0] + a * src[r1 * sw + c1];
            out.push((1.0 - b) * top + b * bottom);
        }
    }
    out
}

pub fn fuse_confidence(pyr: &FeaturePyramid) -> FusedConfidence {
    let finest = pyr.finest();
    let (h, w) = (finest.height(), finest.width());
    let mut values = vec![0f64; h * w];
    for level in pyr.levels() {
        let up = resize(&normalized_product(level), level.height(), level.width(), h, w);
        for (a, v) in values.iter_mut().zip(up) {
            *a += v;
        }
    }
    FusedConfidence { height: h, width: w, values }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Image-resolution pixel `(u, v)`.
    pub pixel: Vector2<f64>,
    /// Cell in the confidence grid `(row, col)`.
    pub cell: (usize, usize),
    pub score: f64,
}

pub fn detect_keypoints(
    conf: &FusedConfidence,
    intr: &CameraIntrinsics,
    max_keypoints: usize,
    patch: usize,
) -> Result<Vec<Detection>> {
    if max_keypoints == 0 || patch == 0 {
        return Err(Error::Config("keypoint budget and patch size must be positive".into()));
    }
    let (h, w) = (conf.height, conf.width);
    let ru = intr.width as f64 / w as f64;
    let rv = intr.height as f64 / h as f64;
    let first_row = (0..h).find(|&r| rescale_coord(r as f64, rv) > intr.cy);
    let Some(first_row) = first_row else {
        return Err(Error::EmptyRegion);
    };

    let (prows, pcols) = (h.div_ceil(patch), w.div_ceil(patch));
    let mut best: Vec<Option<(usize, usize, f64)>> = vec![None; prows * pcols];
    for r in first_row..h {
        for c in 0..w {
            let s = conf.get(r, c);
            if !s.is_finite() {
                continue;
            }
            let slot = &mut best[(r / patch) * pcols + c / patch];
            match slot {
                Some((_, _, b)) if s <= *b => {}
                _ => *slot = Some((r, c, s)),
            }
        }
    }
    let mut candidates: Vec<(usize, usize, f64)> = best.into_iter().flatten().collect();
    if candidates.is_empty() {
        return Err(Error::EmptyRegion);
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    candidates.truncate(max_keypoints);
    Ok(candidates
        .into_iter()
        .map(|(r, c, s)| Detection {
            pixel: Vector2::new(rescale_coord(c as f64, ru), rescale_coord(r as f64, rv)),
            cell: (r, c),
            score: s,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub pixel: Vector2<f64>,
    pub camera_index: usize,
    pub ground_point: GroundPoint3D,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<Keypoint>,
    /// Detections discarded because their ray misses the ground.
    pub dropped: usize,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: KeypointSet) {
        self.points.extend(other.points);
        self.dropped += other.dropped;
    }
}

pub fn lift_keypoints(
    detections: &[Detection],
    camera_index: usize,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> KeypointSet {
    let mut set = KeypointSet::default();
    for d in detections {
        let ray = inverse_project(intr, &extr.rot_cam_to_vehicle, &d.pixel);
        match lift_to_ground(&ray, extr) {
            Ok(ground_point) => set.points.push(Keypoint {
                pixel: d.pixel,
                camera_index,
                ground_point,
                score: d.score,
            }),
            Err(_) => set.dropped += 1,
        }
    }
    set
}

/// Full per-camera detection: fuse, detect, lift.
pub fn detect_and_lift(
    pyr: &FeaturePyramid,
    camera_index: usize,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    cfg: &VokdConfig,
) -> Result<KeypointSet> {
    let conf = fuse_confidence(pyr);
    let det = detect_keypoints(&conf, intr, cfg.max_keypoints, cfg.patch)?;
    Ok(lift_keypoints(&det, camera_index, intr, extr))
}

#[derive(Serialize)]
struct KeypointRecord {
    camera: usize,
    u: f64,
    v: f64,
    x: f64,
    y: f64,
    score: f64,
}

/// One JSON object per line: `{camera, u, v, x, y, score}`.
pub fn write_keypoints_jsonl(points: &[Keypoint], mut out: impl Write) -> Result<()> {
    for k in points {
        let rec = KeypointRecord {
            camera: k.camera_index,
            u: k.pixel.x,
            v: k.pixel.y,
            x: k.ground_point.x,
            y: k.ground_point.y,
            score: k.score,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera_rotation;
    use crate::pyramid::min_max_normalize;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr(w: u32, h: u32, cy: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, w as f64 / 2.0, cy, w, h).unwrap()
    }

    fn conf(g: Grid) -> FusedConfidence {
        FusedConfidence::from_grid(&g)
    }

    #[test]
    fn uniform_confidence_picks_patch_origins() {
        let c = conf(Grid::filled(24, 16, 1, 1.0));
        let det = detect_keypoints(&c, &intr(16, 24, 7.0), 4, 8).unwrap();
        let cells: Vec<_> = det.iter().map(|d| d.cell).collect();
        assert_eq!(cells, vec![(8, 0), (8, 8), (16, 0), (16, 8)]);
        assert_eq!(det[0].pixel, Vector2::new(0.0, 8.0));
    }

    #[test]
    fn spike_above_focal_row_is_ignored() {
        let mut g = Grid::zeros(24, 16, 1);
        g.set(3, 3, 0, 10.0);
        let det = detect_keypoints(&conf(g.clone()), &intr(16, 24, 7.0), 1, 8).unwrap();
        assert_eq!(det[0].cell, (8, 0));
        assert_eq!(det[0].score, 0.0);
        // nothing below the focal row
        let err = detect_keypoints(&conf(g), &intr(16, 24, 23.5), 1, 8);
        assert!(matches!(err, Err(Error::EmptyRegion)));
    }

    #[test]
    fn focal_mask_is_strict() {
        let g = Grid::filled(10, 4, 1, 1.0);
        let det = detect_keypoints(&conf(g), &intr(4, 10, 5.0), 100, 1).unwrap();
        assert!(det.iter().all(|d| d.pixel.y > 5.0));
        assert_eq!(det.len(), 4 * 4);
    }

    #[test]
    fn resolution_ratio_maps_pixels() {
        // 2x coarser grid than the image
        let g = Grid::filled(12, 8, 1, 1.0);
        let det = detect_keypoints(&conf(g), &intr(16, 24, 7.0), 100, 1).unwrap();
        for d in &det {
            let (r, c) = d.cell;
            assert_eq!(d.pixel, Vector2::new(2.0 * c as f64 + 0.5, 2.0 * r as f64 + 0.5));
            assert!(d.pixel.y > 7.0);
        }
    }

    #[test]
    fn non_finite_scores_are_skipped() {
        let mut g = Grid::filled(16, 8, 1, f32::NAN);
        g.set(12, 3, 0, 0.2);
        let det = detect_keypoints(&conf(g), &intr(8, 16, 7.0), 5, 8).unwrap();
        assert_eq!(det.len(), 1);
        assert_eq!(det[0].cell, (12, 3));
    }

    #[test]
    fn selection_is_monotone_in_own_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let g = Grid::from_fn(40, 48, 1, |_, _, _| rng.gen_range(0.0..1.0));
            let i = intr(48, 40, 10.0);
            let det = detect_keypoints(&conf(g.clone()), &i, 12, 8).unwrap();
            let pick = det[rng.gen_range(0..det.len())].cell;
            let mut g2 = g.clone();
            g2.set(pick.0, pick.1, 0, g.get(pick.0, pick.1, 0) + 0.5);
            let det2 = detect_keypoints(&conf(g2), &i, 12, 8).unwrap();
            assert!(det2.iter().any(|d| d.cell == pick));
        }
    }

    fn level(v: Grid, o: Grid) -> PyramidLevel {
        let (h, w, _) = v.shape();
        PyramidLevel { features: Grid::zeros(h, w, 1), view_consistent: v, on_ground: o }
    }

    #[test]
    fn single_level_normalized_product_is_identity() {
        let v = Grid::from_fn(6, 6, 1, |r, c, _| if r == c { 1.0 } else { 0.0 });
        let pyr = FeaturePyramid::new(vec![level(v.clone(), Grid::filled(6, 6, 1, 1.0))]).unwrap();
        assert_eq!(fuse_confidence(&pyr), FusedConfidence::from_grid(&v));
    }

    #[test]
    fn constant_level_contributes_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let coarse = level(Grid::filled(4, 4, 1, 0.3), Grid::filled(4, 4, 1, 0.7));
        let fv = Grid::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.0..1.0));
        let fine = level(fv.clone(), Grid::filled(8, 8, 1, 1.0));
        let pyr = FeaturePyramid::new(vec![coarse, fine]).unwrap();
        let fused = fuse_confidence(&pyr);
        let norm = min_max_normalize(&fv);
        for r in 0..8 {
            for c in 0..8 {
                let expect = 0.5 + norm.get(r, c, 0) as f64;
                assert!((fused.get(r, c) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lift_drops_points_above_horizon() {
        let i = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let e = CameraExtrinsics::new(camera_rotation(0.0, 0.0), Vector3::new(0.0, 0.0, -1.6), 1.6).unwrap();
        let ys = [80.0, 90.0, 70.0, 10.0, 50.0];
        let det: Vec<_> = ys
            .iter()
            .map(|&y| Detection { pixel: Vector2::new(50.0, y), cell: (0, 0), score: 1.0 })
            .collect();
        let set = lift_keypoints(&det, 2, &i, &e);
        assert_eq!(set.len(), 3);
        assert_eq!(set.dropped, 2);
        // principal column lands straight ahead
        for k in &set.points {
            assert_eq!(k.camera_index, 2);
            assert!(k.ground_point.x > 0.0);
            assert_eq!(k.ground_point.y, 0.0);
            assert_eq!(k.ground_point.z, 0.0);
        }
        assert!((set.points[0].ground_point.x - 1.6 * 100.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn keypoint_dump_format() {
        let k = Keypoint {
            pixel: Vector2::new(1.5, 2.0),
            camera_index: 1,
            ground_point: GroundPoint3D::new(3.0, -4.0, 0.0),
            score: 0.5,
        };
        let mut buf = Vec::new();
        write_keypoints_jsonl(&[k, k], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], r#"{"camera":1,"u":1.5,"v":2.0,"x":3.0,"y":-4.0,"score":0.5}"#);
    }
}
