//! `satloc` command line: `synth`, `localize`, `eval`, `gradcheck`.
//!
//! Exit status 0 on success, 1 on usage errors, 2 on data errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::harness::eval::prepare_with_pyramids;
use crate::harness::{
    evaluate, gradient_check, pose_error, prepare_scene_set, read_scene, sweep_translation, synth_scene,
    synth_scene_set, write_metrics_csv, write_scene, write_sweep_csv, CameraSelection, MaskMode, NoiseModel,
    PipelineConfig, SceneSpec, TextureKind,
};
use crate::optimizer::{write_trace_jsonl, AcceptRule};
use crate::pyramid::read_pyramid;
use crate::vokd::write_keypoints_jsonl;
use crate::geometry::Pose3DoF;

#[derive(Debug, Parser)]
#[command(name = "satloc", version, about = "Ground-to-satellite 3-DoF localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene directory.
    Synth(SynthArgs),
    /// Refine a pose on a scene directory and print it as JSON.
    Localize(LocalizeArgs),
    /// Monte Carlo evaluation on synthetic scenes.
    Eval(EvalArgs),
    /// Finite-difference check of all analytic derivatives.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "blobs")]
    texture: TextureKind,
    /// `front` or `all` (front, left, right, rear).
    #[arg(long, default_value = "all")]
    cameras: CameraSelection,
    #[arg(long, default_value_t = 4)]
    distractors: usize,
}

#[derive(Debug, Clone, Args)]
struct PipelineArgs {
    #[arg(long, default_value = "max")]
    fusion: FusionStrategy,
    /// Source of ground on-ground maps: `oracle` (scene masks) or `ones`.
    #[arg(long, default_value = "oracle")]
    mask: MaskMode,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 256)]
    keypoints: usize,
    /// LM step acceptance: `cost` or `frozen` (cost over the common point
    /// set with current confidences).
    #[arg(long, default_value = "cost")]
    accept: AcceptRule,
}

impl PipelineArgs {
    fn config(&self, cameras: CameraSelection) -> PipelineConfig {
        let mut cfg = PipelineConfig { mask: self.mask, cameras, ..Default::default() };
        cfg.lm.fusion = self.fusion;
        cfg.lm.levels = self.levels;
        cfg.lm.iters_per_level = self.iters;
        cfg.vokd.max_keypoints = self.keypoints;
        cfg.lm.accept = self.accept;
        cfg
    }
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Initial pose `lateral,longitudinal,yaw` in meters and degrees, e.g.
    /// `-3.2,1.1,8deg`. Defaults to the anchor.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    /// JSONL optimizer trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSONL keypoint dump.
    #[arg(long)]
    keypoints_out: Option<PathBuf>,
    /// Directory with `satellite.pacl` and `cam_<name>.pacl` to use instead
    /// of the built-in extractor.
    #[arg(long)]
    pyramids: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    cameras: CameraSelection,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 10)]
    trials_per_scene: usize,
    /// `lateral,longitudinal,yaw_deg` half-ranges.
    #[arg(long, default_value = "5,5,15")]
    noise: NoiseModel,
    /// Comma-separated translation noise levels; runs a sweep at the yaw
    /// range of `--noise`.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "front")]
    cameras: CameraSelection,
    #[arg(long, default_value = "blobs")]
    texture: TextureKind,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 500)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `lat,lon,yaw` with an optional `deg` suffix on the yaw.
pub fn parse_init(s: &str) -> Result<Pose3DoF> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lat, lon, yaw] = parts[..] else {
        return Err(Error::Config(format!("initial pose {s:?} needs three comma-separated values")));
    };
    let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Config(format!("initial pose {s:?}: {e}")));
    let yaw = yaw.strip_suffix("deg").unwrap_or(yaw);
    Ok(Pose3DoF::from_degrees(num(lat)?, num(lon)?, num(yaw)?))
}

#[derive(Serialize)]
struct LocalizeOutput {
    lateral: f64,
    longitudinal: f64,
    yaw_deg: f64,
    converged: bool,
    cost: f64,
    keypoints: usize,
    gt_error: Option<crate::harness::PoseError>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SceneSpec::new(a.seed);
    spec.texture = a.texture;
    spec.distractors.count = a.distractors;
    if a.cameras == CameraSelection::Front {
        spec.rig.cameras.truncate(1);
    }
    let scene = synth_scene(&spec)?;
    write_scene(&scene, &a.out)?;
    println!("wrote {} camera(s) to {}", scene.rig.len(), a.out.display());
    Ok(())
}

fn run_localize(a: &LocalizeArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let cfg = a.pipeline.config(a.cameras);
    let prepared = match &a.pyramids {
        None => crate::harness::prepare_scene(&scene, &cfg)?,
        Some(dir) => {
            let sat = read_pyramid(dir.join("satellite.pacl"))?;
            let n = if cfg.cameras == CameraSelection::Front { 1 } else { scene.rig.len() };
            let ground = scene.rig.cameras[..n]
                .iter()
                .map(|c| read_pyramid(dir.join(format!("cam_{}.pacl", c.name))))
                .collect::<Result<Vec<_>>>()?;
            prepare_with_pyramids(&scene, &cfg, sat, ground)?
        }
    };
    let init = match &a.init {
        Some(s) => parse_init(s)?,
        None => Pose3DoF::identity(),
    };
    let report = prepared.localize(init, &cfg.lm)?;
    if let Some(path) = &a.trace {
        let mut w = create(path)?;
        write_trace_jsonl(&report, &mut w)?;
        w.flush()?;
    }
    if let Some(path) = &a.keypoints_out {
        let mut w = create(path)?;
        write_keypoints_jsonl(&prepared.keypoints.points, &mut w)?;
        w.flush()?;
    }
    let p = report.final_pose;
    let has_gt = a.scene.join("gt_pose.json").exists();
    let out = LocalizeOutput {
        lateral: p.lateral,
        longitudinal: p.longitudinal,
        yaw_deg: p.yaw_degrees(),
        converged: report.converged,
        cost: report.levels.last().map_or(f64::NAN, |l| l.final_cost),
        keypoints: prepared.keypoints.len(),
        gt_error: has_gt.then(|| pose_error(&p, &prepared.gt, &prepared.anchor)),
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    if a.scenes == 0 || a.trials_per_scene == 0 {
        return Err(Error::Config("--scenes and --trials-per-scene must be positive".into()));
    }
    let cfg = a.pipeline.config(a.cameras);
    let mut template = SceneSpec::new(0);
    template.texture = a.texture;
    let scenes = synth_scene_set(&template, a.scenes, a.seed)?;
    let prepared = prepare_scene_set(&scenes, &cfg)?;
    match &a.sweep {
        None => {
            let ev = evaluate(&prepared, &a.noise, &cfg.lm, a.trials_per_scene, a.seed)?;
            eprintln!("{}", ev.table);
            match &a.report {
                Some(path) => write_metrics_csv(&ev.table, create(path)?)?,
                None => write_metrics_csv(&ev.table, std::io::stdout().lock())?,
            }
        }
        Some(levels) => {
            let rows = sweep_translation(&prepared, levels, a.noise.yaw_deg, &cfg.lm, a.trials_per_scene, a.seed)?;
            match &a.report {
                Some(path) => write_sweep_csv(&rows, create(path)?)?,
                None => write_sweep_csv(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let r = gradient_check(a.configs, a.seed)?;
    println!("configurations        {}", r.configs);
    println!("pose_jacobian         {:.3e}", r.pose_jacobian);
    println!("residual_chain        {:.3e}", r.residual_chain);
    println!("bilinear_gradient     {:.3e}", r.bilinear);
    println!("reprojection_gradient {:.3e}", r.reprojection);
    println!("elapsed               {:.3} s", r.elapsed.as_secs_f64());
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Localize(a) => run_localize(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
