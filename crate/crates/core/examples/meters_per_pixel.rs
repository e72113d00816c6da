//! Ground resolution of web-mercator tiles at a few latitudes.

use satloc::geometry::meters_per_pixel;
use satloc::SatelliteFrame;

fn main() -> satloc::Result<()> {
    for (place, lat) in [("equator", 0.0), ("Detroit", 42.30), ("Karlsruhe", 49.01), ("Oslo", 59.91)] {
        let g = meters_per_pixel(lat, 18, 2)?;
        println!("{place:<10} {lat:>6.2} deg  {g:.4} m/px  ({:.1} m across a 512 px tile)", g * 512.0);
    }

    let frame = SatelliteFrame::new(512, 512, meters_per_pixel(49.01, 18, 2)?)?;
    let px = frame.world_to_pixel(&nalgebra::Vector2::new(10.0, -5.0));
    println!("10 m East, 5 m North of the tile center -> pixel ({:.2}, {:.2})", px.x, px.y);
    Ok(())
}
