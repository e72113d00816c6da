use satloc::fusion::FusionStrategy;
use satloc::harness::{prepare_scene, synth_scene, PipelineConfig, SceneSpec};

fn main() -> satloc::Result<()> {
    let scene = synth_scene(&SceneSpec::new(2))?;
    let prepared = prepare_scene(&scene, &PipelineConfig::default())?;
    let problem = prepared.problem();
    for strategy in [FusionStrategy::Max, FusionStrategy::Mean] {
        for level in 0..prepared.satellite_pyramid.len() {
            let l = problem.prepare_level(level, strategy);
            let mut per_cam = vec![0; prepared.cameras.len()];
            for p in &l.points {
                per_cam[p.source_camera] += 1;
            }
            let mean_w = l.points.iter().map(|p| p.weight).sum::<f64>() / l.points.len() as f64;
            let names: Vec<String> =
                prepared.cameras.iter().zip(&per_cam).map(|(c, n)| format!("{} {n}", c.name)).collect();
            println!(
                "{strategy:<4} level {level}: {} points, {} unseen, mean weight {mean_w:.3}, winners: {}",
                l.points.len(),
                l.invisible,
                names.join(", ")
            );
        }
    }
    Ok(())
}
