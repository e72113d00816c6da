//! Feature-metric pose refinement.
//!
//! For every fused keypoint the residual is the satellite feature sampled at
//! the keypoint's projection minus the keypoint's own (ground) feature. The
//! weight is the product of both views' `V * O` samples, optionally times
//! the IRLS factor of the robust cost. The pose update solves the 3x3 damped
//! normal equations `(H + lambda diag(H)) delta = -J^T W r`.

use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{fuse_keypoints, FusedPoint, FusionStrategy, GroundLevelView};
use crate::geometry::{
    pose_jacobian, pose_to_transform, satellite_project, Anchor, Camera, GroundPoint3D, Pose3DoF,
    SatelliteFrame,
};
use crate::pyramid::{rescale_coord, FeaturePyramid, Grid};
use crate::vokd::Keypoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustKind {
    /// Plain least squares.
    Squared,
    Huber,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustCost {
    pub kind: RobustKind,
    /// Huber threshold on the residual norm, feature units.
    pub scale: f64,
}

impl Default for RobustCost {
    fn default() -> Self {
        Self { kind: RobustKind::Huber, scale: 1.0 }
    }
}

/// Returns `(rho(s^2), d rho / d(s^2))` for a squared residual norm.
pub fn robust_weight(sq_norm: f64, cost: &RobustCost) -> (f64, f64) {
    match cost.kind {
        RobustKind::Squared => (sq_norm, 1.0),
        RobustKind::Huber => {
            let s = sq_norm.max(0.0).sqrt();
            let k = cost.scale;
            if s <= k {
                (sq_norm, 1.0)
            } else {
                (k * (2.0 * s - k), k / s)
            }
        }
    }
}

/// Settings shared by system construction and the LM loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub robust: RobustCost,
    /// Multiply point weights by the robust IRLS factor.
    pub irls: bool,
    /// Feature channels entering the residual; `None` uses all of them.
    pub channels: Option<Vec<usize>>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { robust: RobustCost::default(), irls: true, channels: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelOrder {
    #[default]
    CoarseToFine,
    FineToCoarse,
}

/// When an LM step is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptRule {
    /// The total weighted cost does not increase.
    #[default]
    Cost,
    /// The cost over points active at both poses, weighted by the current
    /// confidences, does not increase. Ignores cost changes that come only
    /// from points entering or leaving the tile or from moving onto
    /// low-confidence pixels.
    FrozenWeights,
}

impl FromStr for AcceptRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cost" => Ok(Self::Cost),
            "frozen" => Ok(Self::FrozenWeights),
            other => Err(Error::Config(format!("unknown accept rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LMConfig {
    /// Number of pyramid levels used, counted from the finest.
    pub levels: usize,
    pub iters_per_level: usize,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Triplet loss sharpness.
    pub alpha: f64,
    /// Componentwise early-stop threshold on accepted steps.
    pub min_step: [f64; 3],
    pub system: SystemConfig,
    pub fusion: FusionStrategy,
    pub order: LevelOrder,
    pub accept: AcceptRule,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            iters_per_level: 20,
            lambda_init: 0.01,
            lambda_min: 1e-6,
            lambda_max: 1e4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            alpha: 10.0,
            min_step: [1e-4, 1e-4, 1e-6],
            system: SystemConfig::default(),
            fusion: FusionStrategy::Max,
            order: LevelOrder::CoarseToFine,
            accept: AcceptRule::Cost,
        }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.iters_per_level == 0 {
            return Err(Error::Config("levels and iterations per level must be positive".into()));
        }
        if !(self.lambda_init > 0.0 && self.lambda_min > 0.0 && self.lambda_max >= self.lambda_min) {
            return Err(Error::Config("damping must be positive".into()));
        }
        Ok(())
    }
}

/// One pyramid level of the satellite view.
#[derive(Debug, Clone)]
pub struct SatelliteLevel<'a> {
    pub frame: &'a SatelliteFrame,
    pub features: &'a Grid,
    /// `V * O` at this level.
    pub confidence: Grid,
}

impl SatelliteLevel<'_> {
    fn ratios(&self) -> (f64, f64) {
        (
            self.features.width() as f64 / self.frame.width as f64,
            self.features.height() as f64 / self.frame.height as f64,
        )
    }
}

/// Linearization of one active point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTerm {
    /// Index into the fused point list.
    pub index: usize,
    pub residual: Vec<f64>,
    /// `w^s * w^g`.
    pub confidence: f64,
    /// Weight used in the normal equations (confidence, times IRLS factor).
    pub weight: f64,
    /// One `[d/dlat, d/dlon, d/dyaw]` row per residual channel.
    pub jacobian: Vec<[f64; 3]>,
    /// `rho(|r|^2)`.
    pub robust_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSystem {
    pub terms: Vec<PointTerm>,
    /// `sum_p w^s w^g rho(|r|^2)`.
    pub cost: f64,
    pub hessian: Matrix3<f64>,
    /// `J^T W r`.
    pub gradient: Vector3<f64>,
}

impl ResidualSystem {
    pub fn active_count(&self) -> usize {
        self.terms.len()
    }

    fn from_terms(terms: Vec<PointTerm>) -> Self {
        let mut hessian = Matrix3::zeros();
        let mut gradient = Vector3::zeros();
        let mut cost = 0.0;
        for t in &terms {
            cost += t.confidence * t.robust_cost;
            for (row, r) in t.jacobian.iter().zip(&t.residual) {
                let j = Vector3::from(*row);
                hessian += t.weight * j * j.transpose();
                gradient += t.weight * *r * j;
            }
        }
        Self { terms, cost, hessian, gradient }
    }
}

fn selected_channels(cfg: &SystemConfig, available: usize) -> Result<Vec<usize>> {
    let chans: Vec<usize> = match &cfg.channels {
        Some(c) => c.clone(),
        None => (0..available).collect(),
    };
    if chans.is_empty() || chans.iter().any(|&c| c >= available) {
        return Err(Error::Config(format!("residual channels {chans:?} invalid for {available} feature channels")));
    }
    Ok(chans)
}

fn linearize_point(
    index: usize,
    point: &FusedPoint,
    pose: &Pose3DoF,
    anchor: &Anchor,
    sat: &SatelliteLevel<'_>,
    chans: &[usize],
    cfg: &SystemConfig,
) -> Option<PointTerm> {
    let transform = pose_to_transform(pose, anchor);
    let proj = satellite_project(sat.frame, &transform, &point.ground_point);
    let (ru, rv) = sat.ratios();
    let q = Vector2::new(rescale_coord(proj.pixel.x, ru), rescale_coord(proj.pixel.y, rv));
    let c = sat.features.channels();
    let (mut f, mut du, mut dv) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    if !sat.features.lookup_with_gradient_into(&q, &mut f, &mut du, &mut dv) {
        return None;
    }
    let mut ws = [0.0];
    if !sat.confidence.lookup_into(&q, &mut ws) {
        return None;
    }
    let pj = pose_jacobian(sat.frame, pose, anchor, &point.ground_point);
    let mut residual = Vec::with_capacity(chans.len());
    let mut jacobian = Vec::with_capacity(chans.len());
    for &k in chans {
        residual.push(f[k] - point.feature[k]);
        let (a, b) = (du[k] * ru, dv[k] * rv);
        jacobian.push([
            a * pj[(0, 0)] + b * pj[(1, 0)],
            a * pj[(0, 1)] + b * pj[(1, 1)],
            a * pj[(0, 2)] + b * pj[(1, 2)],
        ]);
    }
    let sq: f64 = residual.iter().map(|r| r * r).sum();
    let (robust_cost, irls) = robust_weight(sq, &cfg.robust);
    let confidence = ws[0] * point.weight;
    let weight = if cfg.irls { confidence * irls } else { confidence };
    Some(PointTerm { index, residual, confidence, weight, jacobian, robust_cost })
}

/// Linearizes all points at `pose`. Fails when fewer than three points
/// project inside the satellite level.
pub fn build_system(
    pose: &Pose3DoF,
    points: &[FusedPoint],
    sat: &SatelliteLevel<'_>,
    anchor: &Anchor,
    cfg: &SystemConfig,
) -> Result<ResidualSystem> {
    let chans = selected_channels(cfg, sat.features.channels())?;
    if let Some(p) = points.iter().find(|p| p.feature.len() != sat.features.channels()) {
        return Err(Error::Config(format!(
            "ground feature has {} channels, satellite has {}",
            p.feature.len(),
            sat.features.channels()
        )));
    }
    let terms: Vec<PointTerm> = points
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| linearize_point(i, p, pose, anchor, sat, &chans, cfg))
        .collect();
    if terms.len() < 3 {
        return Err(Error::DegenerateSystem { active: terms.len() });
    }
    Ok(ResidualSystem::from_terms(terms))
}

/// Solves `(H + lambda diag(H)) delta = -g` for any square system.
pub fn lm_update(h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = h.nrows();
    let mut damped = h.clone();
    for i in 0..n {
        damped[(i, i)] += lambda * h[(i, i)];
    }
    let sym = (&damped + damped.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e14 || !(max > 0.0) {
        return Err(Error::SingularHessian { condition });
    }
    let rhs = -g;
    let sol = match damped.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => damped.lu().solve(&rhs).ok_or(Error::SingularHessian { condition })?,
    };
    Ok(sol)
}

/// Pose update for a residual system.
pub fn lm_step(system: &ResidualSystem, lambda: f64) -> Result<Vector3<f64>> {
    let h = DMatrix::from_iterator(3, 3, system.hessian.iter().copied());
    let g = DVector::from_iterator(3, system.gradient.iter().copied());
    let d = lm_update(&h, &g, lambda)?;
    Ok(Vector3::new(d[0], d[1], d[2]))
}

/// Everything the LM loop needs besides the initial pose.
#[derive(Debug, Clone, Copy)]
pub struct LocalizationProblem<'a> {
    pub satellite: &'a SatelliteFrame,
    pub anchor: &'a Anchor,
    pub satellite_pyramid: &'a FeaturePyramid,
    pub cameras: &'a [Camera],
    pub ground_pyramids: &'a [FeaturePyramid],
    pub keypoints: &'a [Keypoint],
}

/// Pose-independent data of one optimization level.
pub struct PreparedLevel<'a> {
    /// Pyramid index, 0 = coarsest.
    pub level: usize,
    pub satellite: SatelliteLevel<'a>,
    pub points: Vec<FusedPoint>,
    pub invisible: usize,
}

impl<'a> LocalizationProblem<'a> {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.ground_pyramids.len() {
            return Err(Error::Config(format!(
                "{} cameras but {} ground pyramids",
                self.cameras.len(),
                self.ground_pyramids.len()
            )));
        }
        let n = self.satellite_pyramid.len();
        if self.ground_pyramids.iter().any(|p| p.len() != n) {
            return Err(Error::Config("ground and satellite pyramids differ in level count".into()));
        }
        Ok(())
    }

    /// Fuses ground features and weights at pyramid level `level`.
    pub fn prepare_level(&self, level: usize, strategy: FusionStrategy) -> PreparedLevel<'a> {
        let confidences: Vec<Grid> = self
            .ground_pyramids
            .iter()
            .map(|p| p.level(level).confidence())
            .collect();
        let views: Vec<GroundLevelView<'_>> = self
            .cameras
            .iter()
            .zip(self.ground_pyramids)
            .zip(&confidences)
            .map(|((camera, pyr), conf)| GroundLevelView {
                camera,
                features: &pyr.level(level).features,
                confidence: conf,
            })
            .collect();
        let (points, invisible) = fuse_keypoints(self.keypoints, &views, strategy);
        let sat_level = self.satellite_pyramid.level(level);
        PreparedLevel {
            level,
            satellite: SatelliteLevel {
                frame: self.satellite,
                features: &sat_level.features,
                confidence: sat_level.confidence(),
            },
            points,
            invisible,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub level: usize,
    pub iter: usize,
    pub lambda: f64,
    /// Cost at the pose kept after this iteration.
    pub cost: f64,
    pub pose: Pose3DoF,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSummary {
    pub level: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub early_stopped: bool,
    pub active_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub trajectory: Vec<IterationRecord>,
    pub final_pose: Pose3DoF,
    pub levels: Vec<LevelSummary>,
    /// The last level stopped on a small step before its iteration cap.
    pub converged: bool,
}

pub fn optimize(initial: Pose3DoF, problem: &LocalizationProblem<'_>, cfg: &LMConfig) -> Result<OptimizeReport> {
    cfg.validate()?;
    problem.validate()?;
    let total = problem.satellite_pyramid.len();
    if cfg.levels > total {
        return Err(Error::Config(format!("{} levels requested, pyramids have {total}", cfg.levels)));
    }
    let mut order: Vec<usize> = (total - cfg.levels..total).collect();
    if cfg.order == LevelOrder::FineToCoarse {
        order.reverse();
    }

    let mut pose = initial;
    let mut trajectory = Vec::with_capacity(cfg.levels * cfg.iters_per_level);
    let mut levels = Vec::with_capacity(cfg.levels);
    let mut converged = false;
    for &level in &order {
        let prep = problem.prepare_level(level, cfg.fusion);
        let mut system = build_system(&pose, &prep.points, &prep.satellite, problem.anchor, &cfg.system)?;
        let initial_cost = system.cost;
        let mut lambda = cfg.lambda_init;
        let mut iterations = 0;
        let mut early_stopped = false;
        for iter in 0..cfg.iters_per_level {
            iterations += 1;
            let delta = lm_step(&system, lambda)?;
            let candidate = pose.apply_delta(&delta);
            let trial = build_system(&candidate, &prep.points, &prep.satellite, problem.anchor, &cfg.system);
            let used_lambda = lambda;
            let accepted = match trial {
                Ok(next) if accept(cfg.accept, &system, &next) => {
                    pose = candidate;
                    system = next;
                    lambda = (lambda * cfg.lambda_down).max(cfg.lambda_min);
                    true
                }
                _ => {
                    lambda = (lambda * cfg.lambda_up).min(cfg.lambda_max);
                    false
                }
            };
            trajectory.push(IterationRecord {
                level,
                iter,
                lambda: used_lambda,
                cost: system.cost,
                pose,
                step_norm: delta.norm(),
                accepted,
            });
            let small = (0..3).all(|k| delta[k].abs() < cfg.min_step[k]);
            if accepted && small {
                early_stopped = true;
                break;
            }
        }
        converged = early_stopped;
        levels.push(LevelSummary {
            level,
            initial_cost,
            final_cost: system.cost,
            iterations,
            early_stopped,
            active_points: system.active_count(),
        });
    }
    Ok(OptimizeReport { trajectory, final_pose: pose, levels, converged })
}

fn accept(rule: AcceptRule, cur: &ResidualSystem, next: &ResidualSystem) -> bool {
    match rule {
        AcceptRule::Cost => next.cost <= cur.cost,
        AcceptRule::FrozenWeights => {
            let (a, b) = frozen_costs(cur, next);
            b <= a
        }
    }
}

/// Costs of the points active in both systems, weighted by `cur`'s
/// confidences.
pub fn frozen_costs(cur: &ResidualSystem, next: &ResidualSystem) -> (f64, f64) {
    let (mut i, mut j) = (0, 0);
    let (mut a, mut b) = (0.0, 0.0);
    while i < cur.terms.len() && j < next.terms.len() {
        let (p, q) = (&cur.terms[i], &next.terms[j]);
        match p.index.cmp(&q.index) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                a += p.confidence * p.robust_cost;
                b += p.confidence * q.robust_cost;
                i += 1;
                j += 1;
            }
        }
    }
    (a, b)
}

#[derive(Serialize)]
struct TraceRecord {
    level: usize,
    iter: usize,
    lambda: f64,
    cost: f64,
    pose: [f64; 3],
    step_norm: f64,
    accepted: bool,
}

/// One JSON object per iteration; yaw in degrees.
pub fn write_trace_jsonl(report: &OptimizeReport, mut out: impl Write) -> Result<()> {
    for r in &report.trajectory {
        let rec = TraceRecord {
            level: r.level,
            iter: r.iter,
            lambda: r.lambda,
            cost: r.cost,
            pose: [r.pose.lateral, r.pose.longitudinal, r.pose.yaw_degrees()],
            step_norm: r.step_norm,
            accepted: r.accepted,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Softplus of `alpha (1 - cost_init / cost_gt)`. A zero ground-truth cost
/// yields the cap `ln(1 + e^alpha)`.
pub fn triplet_loss_from_costs(cost_init: f64, cost_gt: f64, alpha: f64) -> f64 {
    if cost_gt == 0.0 {
        return softplus(alpha);
    }
    softplus(alpha * (1.0 - cost_init / cost_gt))
}

pub fn triplet_loss(system_init: &ResidualSystem, system_gt: &ResidualSystem, alpha: f64) -> f64 {
    triplet_loss_from_costs(system_init.cost, system_gt.cost, alpha)
}

/// Sum of squared satellite-pixel displacements between two poses.
pub fn reprojection_loss(
    pred: &Pose3DoF,
    gt: &Pose3DoF,
    points: &[GroundPoint3D],
    sat: &SatelliteFrame,
    anchor: &Anchor,
) -> f64 {
    let tp = pose_to_transform(pred, anchor);
    let tg = pose_to_transform(gt, anchor);
    points
        .iter()
        .map(|p| (satellite_project(sat, &tp, p).pixel - satellite_project(sat, &tg, p).pixel).norm_squared())
        .sum()
}

/// Analytic gradient of [`reprojection_loss`] with respect to `pred`.
pub fn reprojection_loss_gradient(
    pred: &Pose3DoF,
    gt: &Pose3DoF,
    points: &[GroundPoint3D],
    sat: &SatelliteFrame,
    anchor: &Anchor,
) -> Vector3<f64> {
    let tp = pose_to_transform(pred, anchor);
    let tg = pose_to_transform(gt, anchor);
    points.iter().fold(Vector3::zeros(), |acc, p| {
        let d = satellite_project(sat, &tp, p).pixel - satellite_project(sat, &tg, p).pixel;
        acc + 2.0 * pose_jacobian(sat, pred, anchor, p).transpose() * d
    })
}
