//! Feature extraction for a scene, Monte Carlo trials and the metrics table.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::{build_embedding, EmbeddingConfig, EmbeddingView};
use crate::error::{Error, Result};
use crate::geometry::{pose_to_transform, wrap_angle, Anchor, Camera, Pose3DoF, SatelliteFrame};
use crate::harness::scene::{synth_scene, Scene, SceneSpec};
use crate::optimizer::{optimize, LMConfig, LocalizationProblem, OptimizeReport};
use crate::pyramid::{channels, toy_extract, FeaturePyramid};
use crate::vokd::{detect_and_lift, KeypointSet, VokdConfig};

pub const TRANSLATION_THRESHOLDS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const YAW_THRESHOLDS: [f64; 3] = [1.0, 2.0, 4.0];

/// Source of the ground-view on-ground maps `O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// The scene's oracle masks.
    #[default]
    Oracle,
    /// All ones.
    Ones,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "ones" => Ok(Self::Ones),
            other => Err(Error::Config(format!("unknown mask mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraSelection {
    #[default]
    All,
    /// The first camera of the rig only.
    Front,
}

impl FromStr for CameraSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "front" => Ok(Self::Front),
            other => Err(Error::Config(format!("unknown camera selection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub embedding: EmbeddingConfig,
    pub vokd: VokdConfig,
    pub lm: LMConfig,
    pub mask: MaskMode,
    pub cameras: CameraSelection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut lm = LMConfig::default();
        // only intensity is comparable between the ground and overhead toy features
        lm.system.channels = Some(vec![channels::INTENSITY]);
        Self {
            embedding: EmbeddingConfig::default(),
            vokd: VokdConfig::default(),
            lm,
            mask: MaskMode::Oracle,
            cameras: CameraSelection::All,
        }
    }
}

/// Pose-independent inputs of one localization problem.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub frame: SatelliteFrame,
    pub anchor: Anchor,
    pub gt: Pose3DoF,
    pub cameras: Vec<Camera>,
    pub satellite_pyramid: FeaturePyramid,
    pub ground_pyramids: Vec<FeaturePyramid>,
    pub keypoints: KeypointSet,
}

impl PreparedScene {
    pub fn problem(&self) -> LocalizationProblem<'_> {
        LocalizationProblem {
            satellite: &self.frame,
            anchor: &self.anchor,
            satellite_pyramid: &self.satellite_pyramid,
            cameras: &self.cameras,
            ground_pyramids: &self.ground_pyramids,
            keypoints: &self.keypoints.points,
        }
    }

    pub fn localize(&self, init: Pose3DoF, cfg: &LMConfig) -> Result<OptimizeReport> {
        optimize(init, &self.problem(), cfg)
    }
}

pub fn satellite_pyramid(scene: &Scene, cfg: &PipelineConfig) -> Result<FeaturePyramid> {
    let emb = build_embedding(&EmbeddingView::Satellite { frame: &scene.frame, anchor: &scene.anchor }, &cfg.embedding)?;
    toy_extract(&scene.satellite, &emb, cfg.lm.levels, None)
}

/// Builds ground pyramids for the selected cameras, in parallel.
pub fn ground_pyramids(scene: &Scene, cfg: &PipelineConfig) -> Result<Vec<FeaturePyramid>> {
    let n = selected_count(scene, cfg);
    (0..n)
        .into_par_iter()
        .map(|k| {
            let cam = &scene.rig.cameras[k];
            let view = EmbeddingView::Ground { intrinsics: &cam.intrinsics, extrinsics: &cam.extrinsics };
            let emb = build_embedding(&view, &cfg.embedding)?;
            let mask = match cfg.mask {
                MaskMode::Oracle => Some(&scene.masks[k]),
                MaskMode::Ones => None,
            };
            toy_extract(&scene.ground_images[k], &emb, cfg.lm.levels, mask)
        })
        .collect()
}

fn selected_count(scene: &Scene, cfg: &PipelineConfig) -> usize {
    match cfg.cameras {
        CameraSelection::All => scene.rig.len(),
        CameraSelection::Front => scene.rig.len().min(1),
    }
}

/// Extracts features with the toy extractor and detects keypoints.
pub fn prepare_scene(scene: &Scene, cfg: &PipelineConfig) -> Result<PreparedScene> {
    let sat = satellite_pyramid(scene, cfg)?;
    let ground = ground_pyramids(scene, cfg)?;
    prepare_with_pyramids(scene, cfg, sat, ground)
}

/// Same as [`prepare_scene`] with externally supplied pyramids.
pub fn prepare_with_pyramids(
    scene: &Scene,
    cfg: &PipelineConfig,
    satellite_pyramid: FeaturePyramid,
    ground_pyramids: Vec<FeaturePyramid>,
) -> Result<PreparedScene> {
    let n = selected_count(scene, cfg);
    if ground_pyramids.len() != n {
        return Err(Error::Config(format!("{} ground pyramids for {n} cameras", ground_pyramids.len())));
    }
    let cameras: Vec<Camera> = scene.rig.cameras[..n].to_vec();
    let mut keypoints = KeypointSet::default();
    for (k, (cam, pyr)) in cameras.iter().zip(&ground_pyramids).enumerate() {
        keypoints.extend(detect_and_lift(pyr, k, &cam.intrinsics, &cam.extrinsics, &cfg.vokd)?);
    }
    Ok(PreparedScene {
        frame: scene.frame,
        anchor: scene.anchor,
        gt: scene.gt,
        cameras,
        satellite_pyramid,
        ground_pyramids,
        keypoints,
    })
}

/// Half-widths of the uniform initial-pose perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseModel {
    pub lateral: f64,
    pub longitudinal: f64,
    pub yaw_deg: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { lateral: 5.0, longitudinal: 5.0, yaw_deg: 15.0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if [self.lateral, self.longitudinal, self.yaw_deg].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("noise ranges must be finite and non-negative: {self:?}")))
        }
    }
}

/// Parses `lat,lon,yaw_deg`.
impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("noise {s:?}: {e}")))?;
        let [lateral, longitudinal, yaw_deg] = parts[..] else {
            return Err(Error::Config(format!("noise {s:?} needs three comma-separated values")));
        };
        let n = Self { lateral, longitudinal, yaw_deg };
        n.validate()?;
        Ok(n)
    }
}

fn symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.gen_range(-half..=half)
    } else {
        0.0
    }
}

pub fn sample_initial_pose(gt: &Pose3DoF, noise: &NoiseModel, seed: u64) -> Pose3DoF {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dlat = symmetric(&mut rng, noise.lateral);
    let dlon = symmetric(&mut rng, noise.longitudinal);
    let dyaw = symmetric(&mut rng, noise.yaw_deg);
    Pose3DoF::new(gt.lateral + dlat, gt.longitudinal + dlon, gt.yaw + dyaw.to_radians())
}

/// Seed of trial `trial` in scene `scene`.
pub fn trial_seed(base: u64, scene: usize, trial: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((scene as u64) << 32 | trial as u64)
}

/// Absolute errors in the ground-truth vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseError {
    /// Along the ground-truth right axis, meters.
    pub lateral: f64,
    /// Along the ground-truth forward axis, meters.
    pub longitudinal: f64,
    pub yaw_deg: f64,
}

pub fn pose_error(pred: &Pose3DoF, gt: &Pose3DoF, anchor: &Anchor) -> PoseError {
    let tp = pose_to_transform(pred, anchor);
    let tg = pose_to_transform(gt, anchor);
    let local = tg.rotation().transpose() * (tp.position - tg.position);
    PoseError {
        lateral: local.y.abs(),
        longitudinal: local.x.abs(),
        yaw_deg: wrap_angle(pred.yaw - gt.yaw).abs().to_degrees(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub scene: usize,
    pub trial: usize,
    pub init: Pose3DoF,
    pub final_pose: Option<Pose3DoF>,
    /// `None` when the optimizer failed.
    pub error: Option<PoseError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub lat_mean: f64,
    pub lat_median: f64,
    pub lon_mean: f64,
    pub lon_median: f64,
    pub yaw_mean: f64,
    pub yaw_median: f64,
    pub recall_lat: [f64; 4],
    pub recall_lon: [f64; 4],
    pub recall_yaw: [f64; 3],
    pub trials: usize,
    pub failures: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn recall<const N: usize>(errors: &[f64], total: usize, thresholds: [f64; N]) -> [f64; N] {
    thresholds.map(|t| {
        if total == 0 {
            0.0
        } else {
            errors.iter().filter(|&&e| e < t).count() as f64 / total as f64
        }
    })
}

impl MetricsTable {
    /// Failed trials (`None`) count against every recall and are excluded
    /// from the means and medians.
    pub fn from_errors(errors: &[Option<PoseError>]) -> Self {
        let ok: Vec<PoseError> = errors.iter().flatten().copied().collect();
        let lat: Vec<f64> = ok.iter().map(|e| e.lateral).collect();
        let lon: Vec<f64> = ok.iter().map(|e| e.longitudinal).collect();
        let yaw: Vec<f64> = ok.iter().map(|e| e.yaw_deg).collect();
        let n = errors.len();
        Self {
            lat_mean: mean(&lat),
            lat_median: median(&lat),
            lon_mean: mean(&lon),
            lon_median: median(&lon),
            yaw_mean: mean(&yaw),
            yaw_median: median(&yaw),
            recall_lat: recall(&lat, n, TRANSLATION_THRESHOLDS),
            recall_lon: recall(&lon, n, TRANSLATION_THRESHOLDS),
            recall_yaw: recall(&yaw, n, YAW_THRESHOLDS),
            trials: n,
            failures: n - ok.len(),
        }
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["lat_mean", "lat_median", "lon_mean", "lon_median", "yaw_mean", "yaw_median"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for axis in ["lat", "lon"] {
            h.extend(TRANSLATION_THRESHOLDS.iter().map(|t| format!("r_{axis}@{t}")));
        }
        h.extend(YAW_THRESHOLDS.iter().map(|t| format!("r_yaw@{t}")));
        h.push("trials".into());
        h.push("failures".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.6}");
        let mut r: Vec<String> = [self.lat_mean, self.lat_median, self.lon_mean, self.lon_median, self.yaw_mean, self.yaw_median]
            .into_iter()
            .map(f)
            .collect();
        r.extend(self.recall_lat.iter().chain(&self.recall_lon).chain(&self.recall_yaw).map(|&v| f(v)));
        r.push(self.trials.to_string());
        r.push(self.failures.to_string());
        r
    }
}

impl fmt::Display for MetricsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trials {} (failures {})", self.trials, self.failures)?;
        writeln!(f, "lateral      mean {:.4} m  median {:.4} m", self.lat_mean, self.lat_median)?;
        writeln!(f, "longitudinal mean {:.4} m  median {:.4} m", self.lon_mean, self.lon_median)?;
        writeln!(f, "yaw          mean {:.4} deg  median {:.4} deg", self.yaw_mean, self.yaw_median)?;
        let pct = |v: &[f64]| v.iter().map(|r| format!("{:.1}%", 100.0 * r)).collect::<Vec<_>>().join(" ");
        writeln!(f, "recall lat @{TRANSLATION_THRESHOLDS:?} m: {}", pct(&self.recall_lat))?;
        writeln!(f, "recall lon @{TRANSLATION_THRESHOLDS:?} m: {}", pct(&self.recall_lon))?;
        write!(f, "recall yaw @{YAW_THRESHOLDS:?} deg: {}", pct(&self.recall_yaw))
    }
}

pub fn write_metrics_csv(table: &MetricsTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MetricsTable::csv_header())?;
    w.write_record(table.csv_row())?;
    w.flush()?;
    Ok(())
}

/// One row per translation noise level, prefixed by that level.
pub fn write_sweep_csv(rows: &[(f64, MetricsTable)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["translation_noise".to_string()];
    header.extend(MetricsTable::csv_header());
    w.write_record(&header)?;
    for (noise, table) in rows {
        let mut row = vec![format!("{noise}")];
        row.extend(table.csv_row());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: MetricsTable,
    pub trials: Vec<TrialOutcome>,
}

/// Runs `trials_per_scene` seeded trials on every scene, in parallel.
pub fn evaluate(
    scenes: &[PreparedScene],
    noise: &NoiseModel,
    cfg: &LMConfig,
    trials_per_scene: usize,
    seed: u64,
) -> Result<Evaluation> {
    noise.validate()?;
    cfg.validate()?;
    if trials_per_scene == 0 {
        return Err(Error::Config("at least one trial per scene is required".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..trials_per_scene).map(move |t| (s, t)))
        .collect();
    let trials: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let scene = &scenes[s];
            let init = sample_initial_pose(&scene.gt, noise, trial_seed(seed, s, t));
            let final_pose = scene.localize(init, cfg).ok().map(|r| r.final_pose);
            TrialOutcome {
                scene: s,
                trial: t,
                init,
                final_pose,
                error: final_pose.map(|p| pose_error(&p, &scene.gt, &scene.anchor)),
            }
        })
        .collect();
    let errors: Vec<Option<PoseError>> = trials.iter().map(|t| t.error).collect();
    Ok(Evaluation { table: MetricsTable::from_errors(&errors), trials })
}

/// Synthesizes scenes with seeds `base_seed, base_seed + 1, ...`.
pub fn synth_scene_set(template: &SceneSpec, count: usize, base_seed: u64) -> Result<Vec<Scene>> {
    (0..count)
        .into_par_iter()
        .map(|i| synth_scene(&SceneSpec { seed: base_seed.wrapping_add(i as u64), ..template.clone() }))
        .collect()
}

pub fn prepare_scene_set(scenes: &[Scene], cfg: &PipelineConfig) -> Result<Vec<PreparedScene>> {
    scenes.par_iter().map(|s| prepare_scene(s, cfg)).collect()
}

/// Evaluates each lateral/longitudinal noise level at a fixed yaw range.
pub fn sweep_translation(
    scenes: &[PreparedScene],
    translation: &[f64],
    yaw_deg: f64,
    cfg: &LMConfig,
    trials_per_scene: usize,
    seed: u64,
) -> Result<Vec<(f64, MetricsTable)>> {
    translation
        .iter()
        .map(|&t| {
            let noise = NoiseModel { lateral: t, longitudinal: t, yaw_deg };
            Ok((t, evaluate(scenes, &noise, cfg, trials_per_scene, seed)?.table))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_noise_returns_gt() {
        let gt = Pose3DoF::from_degrees(0.3, -1.0, 4.0);
        let z = NoiseModel { lateral: 0.0, longitudinal: 0.0, yaw_deg: 0.0 };
        assert_eq!(sample_initial_pose(&gt, &z, 9), gt);
    }

    #[test]
    fn noise_samples_within_ranges() {
        let gt = Pose3DoF::identity();
        let n = NoiseModel::default();
        assert_eq!(sample_initial_pose(&gt, &n, 5), sample_initial_pose(&gt, &n, 5));
        let samples: Vec<Pose3DoF> = (0..10_000).map(|i| sample_initial_pose(&gt, &n, i)).collect();
        let lat: Vec<f64> = samples.iter().map(|p| p.lateral).collect();
        let yaw: Vec<f64> = samples.iter().map(|p| p.yaw_degrees()).collect();
        assert!(lat.iter().all(|v| v.abs() <= 5.0));
        assert!(yaw.iter().all(|v| v.abs() <= 15.0 + 1e-9));
        // uniform on [-a, a] has sd a / sqrt(3)
        let sigma = 5.0 / 3f64.sqrt() / 100.0;
        assert!(mean(&lat).abs() < 3.0 * sigma);
        assert!(mean(&yaw).abs() < 3.0 * 15.0 / 3f64.sqrt() / 100.0);
    }

    #[test]
    fn error_frame_follows_gt_heading() {
        let anchor = Anchor::new(Vector2::new(3.0, 4.0), 0.4);
        let gt = Pose3DoF::new(0.5, -0.2, 0.3);
        // displace by 1 m along the gt forward axis in the world
        let tg = pose_to_transform(&gt, &anchor);
        let fwd = tg.rotation().column(0).into_owned();
        let base = crate::geometry::heading_rotation(anchor.heading);
        let delta = base.transpose() * fwd;
        let pred = Pose3DoF::new(gt.lateral + delta.y, gt.longitudinal + delta.x, gt.yaw);
        let e = pose_error(&pred, &gt, &anchor);
        assert!((e.longitudinal - 1.0).abs() < 1e-12 && e.lateral < 1e-12);

        // a pure world-East error lands on different axes for headings 90 deg apart
        let east = |heading: f64| {
            let anchor = Anchor::new(Vector2::zeros(), heading);
            let d = crate::geometry::heading_rotation(heading).transpose() * Vector2::new(1.0, 0.0);
            pose_error(&Pose3DoF::new(d.y, d.x, 0.0), &Pose3DoF::identity(), &anchor)
        };
        let a = east(0.0);
        let b = east(FRAC_PI_2);
        assert!((a.lateral - 1.0).abs() < 1e-12 && a.longitudinal < 1e-12);
        assert!((b.longitudinal - 1.0).abs() < 1e-12 && b.lateral < 1e-12);
    }

    #[test]
    fn threshold_semantics_and_monotone_recall() {
        let e = |lat: f64| Some(PoseError { lateral: lat, longitudinal: 0.0, yaw_deg: 0.0 });
        let t = MetricsTable::from_errors(&[e(0.3)]);
        assert_eq!(t.recall_lat, [0.0, 1.0, 1.0, 1.0]);
        let t = MetricsTable::from_errors(&[e(0.1), e(0.7), None, e(3.0)]);
        assert_eq!(t.failures, 1);
        assert_eq!(t.trials, 4);
        assert_eq!(t.recall_lat, [0.25, 0.25, 0.5, 0.5]);
        assert_eq!(t.recall_yaw, [0.75, 0.75, 0.75]);
        assert!((t.lat_median - 0.7).abs() < 1e-12);
        for w in t.recall_lat.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn csv_layout() {
        let t = MetricsTable::from_errors(&[Some(PoseError { lateral: 0.1, longitudinal: 0.2, yaw_deg: 0.5 })]);
        let mut buf = Vec::new();
        write_metrics_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lat_mean,lat_median,lon_mean,lon_median,yaw_mean,yaw_median,\
             r_lat@0.25,r_lat@0.5,r_lat@1,r_lat@2,r_lon@0.25,r_lon@0.5,r_lon@1,r_lon@2,\
             r_yaw@1,r_yaw@2,r_yaw@4,trials,failures"
        );
        assert!(lines.next().unwrap().ends_with(",1,0"));
    }

    #[test]
    fn noise_parsing() {
        let n: NoiseModel = "5,5,15".parse().unwrap();
        assert_eq!(n, NoiseModel::default());
        assert!("5,5".parse::<NoiseModel>().is_err());
        assert!("5,-1,15".parse::<NoiseModel>().is_err());
        assert!("a,b,c".parse::<NoiseModel>().is_err());
    }
}
