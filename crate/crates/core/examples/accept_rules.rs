//! Compare the two LM step acceptance rules on the same trials.

use satloc::harness::{
    evaluate, prepare_scene_set, synth_scene_set, CameraSelection, NoiseModel, PipelineConfig, SceneSpec,
};
use satloc::optimizer::AcceptRule;

fn main() -> satloc::Result<()> {
    let cfg = PipelineConfig { cameras: CameraSelection::Front, ..Default::default() };
    let scenes = prepare_scene_set(&synth_scene_set(&SceneSpec::new(0), 10, 0)?, &cfg)?;
    for rule in [AcceptRule::Cost, AcceptRule::FrozenWeights] {
        let mut lm = cfg.lm.clone();
        lm.accept = rule;
        let t = evaluate(&scenes, &NoiseModel::default(), &lm, 10, 0)?.table;
        println!(
            "{rule:?}: recall@0.25m lat {:.1}% lon {:.1}%, recall@1deg {:.1}%",
            100.0 * t.recall_lat[0],
            100.0 * t.recall_lon[0],
            100.0 * t.recall_yaw[0]
        );
    }
    Ok(())
}
