use satloc::harness::{
    prepare_scene_set, sweep_translation, synth_scene_set, write_sweep_csv, CameraSelection, PipelineConfig,
    SceneSpec,
};

fn main() -> satloc::Result<()> {
    let cfg = PipelineConfig { cameras: CameraSelection::Front, ..Default::default() };
    let scenes = prepare_scene_set(&synth_scene_set(&SceneSpec::new(0), 6, 0)?, &cfg)?;
    let rows = sweep_translation(&scenes, &[1.0, 5.0, 15.0, 30.0], 15.0, &cfg.lm, 5, 0)?;
    write_sweep_csv(&rows, std::io::stdout().lock())
}
