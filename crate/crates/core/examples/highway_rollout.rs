//! One rollout of the shipped highway scenario under the base
//! distribution, printed as a step-by-step table of the ego vehicle.
//!
//! ```bash
//! cargo run --release -p raresim --example highway_rollout [seed]
//! ```

use std::io::Write;

use raresim::expfam;
use raresim::objective::ego_policy;
use raresim::orchestrator::derive_seed;
use raresim::scenario::{self, base_family};
use raresim::sim::rollout_with_trace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = scenario::parse(scenario::shipped_dir().join("i80.scn"))?;
    let (family, theta0) = base_family(&spec);
    let x = expfam::sample(&family, &theta0, derive_seed(seed, 0))?;
    let ego = ego_policy(spec.ego.policy);
    let mut trace = Vec::new();
    writeln!(trace, "step,vehicle,x,y,heading,speed")?;
    let result = rollout_with_trace(&x, &spec, ego.as_ref(), derive_seed(seed, 1), Some(&mut trace))?;
    let text = String::from_utf8(trace)?;
    for line in text.lines().filter(|l| l.split(',').nth(1) == Some("0")).step_by(25) {
        println!("{line}");
    }
    println!("min_ttc {:.4} s, crashed {}, {} steps", result.min_ttc, result.crashed, result.steps);
    Ok(())
}
