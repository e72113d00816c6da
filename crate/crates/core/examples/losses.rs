use satloc::harness::{prepare_scene, synth_scene, CameraSelection, PipelineConfig, SceneSpec};
use satloc::optimizer::{build_system, reprojection_loss, triplet_loss, triplet_loss_from_costs};
use satloc::Pose3DoF;

fn main() -> satloc::Result<()> {
    for ratio in [0.25, 0.5, 1.0, 2.0, 4.0] {
        println!("triplet(cost_init / cost_gt = {ratio}) = {:.6}", triplet_loss_from_costs(ratio, 1.0, 10.0));
    }

    let scene = synth_scene(&SceneSpec::new(4))?;
    let cfg = PipelineConfig { cameras: CameraSelection::Front, ..Default::default() };
    let p = prepare_scene(&scene, &cfg)?;
    let level = p.problem().prepare_level(p.satellite_pyramid.len() - 1, cfg.lm.fusion);
    let init = Pose3DoF::from_degrees(p.gt.lateral + 2.0, p.gt.longitudinal, p.gt.yaw_degrees() + 5.0);
    let at_init = build_system(&init, &level.points, &level.satellite, &p.anchor, &cfg.lm.system)?;
    let at_gt = build_system(&p.gt, &level.points, &level.satellite, &p.anchor, &cfg.lm.system)?;
    println!("costs: init {:.4}, gt {:.6}", at_init.cost, at_gt.cost);
    println!("triplet loss {:.6}", triplet_loss(&at_init, &at_gt, cfg.lm.alpha));

    let ground: Vec<_> = p.keypoints.points.iter().map(|k| k.ground_point).collect();
    println!("reprojection loss {:.1} px^2 over {} points", reprojection_loss(&init, &p.gt, &ground, &p.frame, &p.anchor), ground.len());
    Ok(())
}
