//! Refine a perturbed pose on one synthetic scene and print the trajectory.

use satloc::harness::{pose_error, prepare_scene, synth_scene, CameraSelection, PipelineConfig, SceneSpec};
use satloc::Pose3DoF;

fn main() -> satloc::Result<()> {
    let scene = synth_scene(&SceneSpec::new(11))?;
    let cfg = PipelineConfig { cameras: CameraSelection::Front, ..Default::default() };
    let prepared = prepare_scene(&scene, &cfg)?;
    let init = Pose3DoF::from_degrees(scene.gt.lateral + 3.0, scene.gt.longitudinal - 2.5, scene.gt.yaw_degrees() + 8.0);

    let report = prepared.localize(init, &cfg.lm)?;
    for it in report.trajectory.iter().filter(|t| t.accepted) {
        let e = pose_error(&it.pose, &scene.gt, &scene.anchor);
        println!(
            "level {} iter {:>2}  lambda {:>8.1e}  cost {:>10.4}  err {:.3} m {:.3} m {:.3} deg",
            it.level, it.iter, it.lambda, it.cost, e.lateral, e.longitudinal, e.yaw_deg
        );
    }
    let e = pose_error(&report.final_pose, &scene.gt, &scene.anchor);
    println!("final: {e:?}, converged {}", report.converged);
    Ok(())
}
