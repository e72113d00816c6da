//! Write a toy pyramid to disk, read it back, and show what a corrupted
//! header reports.

use satloc::embedding::{build_embedding, EmbeddingConfig, EmbeddingView};
use satloc::harness::{synth_scene, SceneSpec};
use satloc::pyramid::{pyramid_from_bytes, pyramid_to_bytes, read_pyramid, toy_extract, write_pyramid};

fn main() -> satloc::Result<()> {
    let scene = synth_scene(&SceneSpec::new(3))?;
    let cam = &scene.rig.cameras[0];
    let emb = build_embedding(
        &EmbeddingView::Ground { intrinsics: &cam.intrinsics, extrinsics: &cam.extrinsics },
        &EmbeddingConfig::default(),
    )?;
    let pyr = toy_extract(&scene.ground_images[0], &emb, 3, Some(&scene.masks[0]))?;

    let path = std::env::temp_dir().join("satloc_example.pacl");
    write_pyramid(&pyr, &path)?;
    let back = read_pyramid(&path)?;
    for (l, level) in back.levels().iter().enumerate() {
        println!("level {l}: {:?}", level.features.shape());
    }
    println!("identical after round trip: {}", back == pyr);

    let mut bytes = pyramid_to_bytes(&pyr);
    bytes[20] ^= 0xff;
    match pyramid_from_bytes(&bytes) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted width: {e}"),
    }
    match pyramid_from_bytes(&bytes[..3]) {
        Ok(_) => println!("truncation went unnoticed"),
        Err(e) => println!("truncated file: {e}"),
    }
    std::fs::remove_file(path)?;
    Ok(())
}
