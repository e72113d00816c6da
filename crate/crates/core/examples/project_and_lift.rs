//! Back-project ground pixels of a pitched camera onto the road plane and
//! project them again, into the camera and into a satellite tile.

use nalgebra::{Vector2, Vector3};
use satloc::fusion::project_to_camera;
use satloc::geometry::{
    camera_rotation, inverse_project, lift_to_ground, pose_to_transform, satellite_project, Anchor,
    CameraExtrinsics, CameraIntrinsics, Pose3DoF, SatelliteFrame,
};

fn main() -> satloc::Result<()> {
    let intr = CameraIntrinsics::new(160.0, 160.0, 160.0, 80.0, 320, 160)?;
    let extr = CameraExtrinsics::new(camera_rotation(0.0, 5f64.to_radians()), Vector3::new(1.0, 0.0, -1.6), 1.6)?;
    let sat = SatelliteFrame::new(512, 512, 0.2)?;
    // vehicle facing East at the tile center
    let anchor = Anchor::new(Vector2::zeros(), 90f64.to_radians());
    let pose = Pose3DoF::from_degrees(0.5, 2.0, 3.0);

    println!("{:>12} {:>22} {:>14} {:>20}", "pixel", "ground (fwd, right)", "reproj err", "satellite pixel");
    for (u, v) in [(160.0, 159.0), (160.0, 100.0), (20.0, 140.0), (300.0, 90.0), (160.0, 70.0)] {
        let px = Vector2::new(u, v);
        let ray = inverse_project(&intr, &extr.rot_cam_to_vehicle, &px);
        match lift_to_ground(&ray, &extr) {
            Ok(g) => {
                let back = project_to_camera(&g, &intr, &extr);
                let s = satellite_project(&sat, &pose_to_transform(&pose, &anchor), &g);
                println!(
                    "({u:>5.1},{v:>5.1}) ({:>8.3}, {:>8.3}) m {:>12.2e} ({:>8.2}, {:>8.2})",
                    g.x,
                    g.y,
                    (back.pixel - px).norm(),
                    s.pixel.x,
                    s.pixel.y
                );
            }
            Err(e) => println!("({u:>5.1},{v:>5.1}) {e}"),
        }
    }
    Ok(())
}
