//! Small Monte Carlo run: front camera against the full rig.

use satloc::harness::{
    evaluate, prepare_scene_set, synth_scene_set, CameraSelection, NoiseModel, PipelineConfig, SceneSpec,
};

fn main() -> satloc::Result<()> {
    let scenes = synth_scene_set(&SceneSpec::new(0), 6, 100)?;
    for cameras in [CameraSelection::Front, CameraSelection::All] {
        let cfg = PipelineConfig { cameras, ..Default::default() };
        let prepared = prepare_scene_set(&scenes, &cfg)?;
        let ev = evaluate(&prepared, &NoiseModel::default(), &cfg.lm, 5, 0)?;
        println!("== {cameras:?}\n{}", ev.table);
    }
    Ok(())
}
