//! Lidar ray casting and the time-to-collision it implies, for a head-on
//! approach and a same-direction follower.
//!
//! ```bash
//! cargo run --release -p raresim --example ttc_lidar
//! ```

use std::f64::consts::PI;

use raresim::sim::{beam_ttc, cast_rays, VehicleState};

fn main() {
    let ego = VehicleState::new(0.0, 0.0, 0.0, 5.0, 4.0, 2.0);
    let cases = [
        ("head-on, 18 m gap, closing 10 m/s", VehicleState::new(22.0, 0.0, PI, 5.0, 4.0, 2.0)),
        ("slower leader, 26 m gap, closing 2 m/s", VehicleState::new(30.0, 0.0, 0.0, 3.0, 4.0, 2.0)),
        ("faster leader, pulling away", VehicleState::new(30.0, 0.0, 0.0, 8.0, 4.0, 2.0)),
        ("adjacent lane, parallel", VehicleState::new(0.0, 3.7, 0.0, 5.0, 4.0, 2.0)),
    ];
    for (label, other) in cases {
        let scan = cast_rays(&ego, &[other], 64, 100.0);
        let hits = scan.ranges.iter().filter(|r| **r < 100.0).count();
        println!("{label:<40} beams hit {hits:>2}, TTC {:.6} s", beam_ttc(&scan));
    }
}
