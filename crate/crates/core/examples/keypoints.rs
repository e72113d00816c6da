//! Detect on-ground keypoints in one synthetic camera and dump them.

use satloc::harness::eval::ground_pyramids;
use satloc::harness::{synth_scene, CameraSelection, PipelineConfig, SceneSpec};
use satloc::vokd::{detect_keypoints, fuse_confidence, lift_keypoints, write_keypoints_jsonl};

fn main() -> satloc::Result<()> {
    let scene = synth_scene(&SceneSpec::new(1))?;
    let cfg = PipelineConfig { cameras: CameraSelection::Front, ..Default::default() };
    let pyr = &ground_pyramids(&scene, &cfg)?[0];
    let cam = &scene.rig.cameras[0];

    let conf = fuse_confidence(pyr);
    let (lo, hi) = conf.values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("fused confidence {}x{} in [{lo:.3}, {hi:.3}]", conf.height, conf.width);

    let det = detect_keypoints(&conf, &cam.intrinsics, 32, 8)?;
    let set = lift_keypoints(&det, 0, &cam.intrinsics, &cam.extrinsics);
    println!("{} detections, {} lifted, {} above the horizon", det.len(), set.len(), set.dropped);
    let on_distractor = set
        .points
        .iter()
        .filter(|k| scene.masks[0].get(k.pixel.y as usize, k.pixel.x as usize, 0) < 0.5)
        .count();
    println!("{on_distractor} keypoints fall on off-ground pixels");
    write_keypoints_jsonl(&set.points[..5], std::io::stdout().lock())?;
    Ok(())
}
