//! Plain Monte Carlo against importance sampling at the same budget, over
//! a grid of thresholds, on the Gaussian toy.
//!
//! ```bash
//! cargo run --release -p raresim --example naive_vs_ce
//! ```

use raresim::ce::report::comparison_summary;
use raresim::ce::{compare_report, estimate_is, estimate_naive, run_ce, select_best, CeConfig, LevelRule, Schedule};
use raresim::objective::ToyGaussian;
use raresim::orchestrator::Serial;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let toy = ToyGaussian::new();
    let grid = [-3.5, -3.0, -2.5, -2.0];
    let config = CeConfig {
        rho: 0.1,
        alpha: Schedule::Constant(0.8),
        n_k: Schedule::Constant(1000),
        iterations: 10,
        gamma: -3.0,
        level_rule: LevelRule::Descend,
        seed: 3,
    };
    let mut serial = Serial::new(&toy);
    let theta = select_best(&run_ce(&toy, &config, &mut serial)?);
    let is = estimate_is(&toy, &theta, 20_000, &grid, &mut serial, 4)?;
    let naive = estimate_naive(&toy, 20_000, &grid, &mut serial, 5)?;
    let rows = compare_report(&is, &naive)?;
    print!("{}", comparison_summary(&is, &naive, &rows));
    Ok(())
}
