//! Cross-entropy search on the one-dimensional Gaussian toy, where the
//! answer P(X ≤ -3) = Φ(-3) is known in closed form.
//!
//! ```bash
//! cargo run --release -p raresim --example toy_gaussian_ce
//! ```

use raresim::ce::{estimate_is, run_ce, select_best, CeConfig, LevelRule, Schedule};
use raresim::expfam::BlockParams;
use raresim::objective::ToyGaussian;
use raresim::orchestrator::Serial;
use statrs::distribution::{ContinuousCDF, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let toy = ToyGaussian::new();
    let config = CeConfig {
        rho: 0.1,
        alpha: Schedule::Constant(0.8),
        n_k: Schedule::Constant(1000),
        iterations: 20,
        gamma: -3.0,
        level_rule: LevelRule::Descend,
        seed: 1,
    };
    let mut serial = Serial::new(&toy);
    let history = run_ce(&toy, &config, &mut serial)?;
    for r in &history.iterations {
        let BlockParams::Gaussian { mu } = &r.theta.0[0] else { unreachable!() };
        println!("k {:>2}  mu {:>8.4}  gamma_k {:>8.4}  rare {:>4}", r.k, mu[0], r.gamma_k, r.rare_count);
    }
    let theta = select_best(&history);
    let est = estimate_is(&toy, &theta, 10_000, &[-3.0], &mut serial, 99)?.remove(0);
    let truth = Normal::new(0.0, 1.0)?.cdf(-3.0);
    println!(
        "p_hat {:.4e} ± {:.1e}  (exact {truth:.4e}, relative error {:.2}%)",
        est.p_hat,
        est.std_err,
        100.0 * (est.p_hat - truth).abs() / truth
    );
    Ok(())
}
