use satloc::embedding::{build_embedding, EmbeddingConfig, EmbeddingView, DISTANCE, HEADING, HEIGHT};
use satloc::harness::front_camera;
use satloc::{Anchor, SatelliteFrame};

fn main() -> satloc::Result<()> {
    let cfg = EmbeddingConfig::default();
    let cam = front_camera();
    let ground = build_embedding(
        &EmbeddingView::Ground { intrinsics: &cam.intrinsics, extrinsics: &cam.extrinsics },
        &cfg,
    )?;
    println!("front camera, column 160 and column 10:");
    for r in [0, 60, 85, 120, 159] {
        println!(
            "  row {r:>3}: heading {:>6.3} / {:>6.3}  distance {:>5.3}  height {:>6.3}",
            ground.get(r, 160, HEADING),
            ground.get(r, 10, HEADING),
            ground.get(r, 160, DISTANCE),
            ground.get(r, 160, HEIGHT)
        );
    }

    let frame = SatelliteFrame::new(64, 64, 1.0)?;
    let anchor = Anchor::new(nalgebra::Vector2::zeros(), 0.0);
    let sat = build_embedding(&EmbeddingView::Satellite { frame: &frame, anchor: &anchor }, &cfg)?;
    println!("satellite, vehicle at the center heading North; heading channel:");
    for r in (0..64).step_by(16) {
        let row: Vec<String> = (0..64).step_by(8).map(|c| format!("{:>5.2}", sat.get(r, c, HEADING))).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
