//! Moment maps of the scaled-Beta family: natural parameters to expected
//! sufficient statistics and back through the Newton solve.
//!
//! ```bash
//! cargo run --release -p raresim --example expfam_moments
//! ```

use raresim::expfam::{mean_params, mean_to_natural, sample, sufficient_stats, Block, BlockParams, FamilySpec, ParamPoint, ScaledBeta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let family = FamilySpec::new(vec![Block::Beta(ScaledBeta::new(0.0, 1.0))]);
    for (alpha, beta) in [(1.5, 1.5), (2.0, 5.0), (6.5, 3.0)] {
        let theta = ParamPoint(vec![BlockParams::Beta { alpha, beta }]);
        let eta = mean_params(&family, &theta)?;
        let back = mean_to_natural(&family, &eta, None)?.flatten();
        // Monte Carlo check of E[ln x], E[ln(1-x)]
        let n = 20_000;
        let mut mc = [0.0; 2];
        for i in 0..n {
            let x = sample(&family, &theta, i)?;
            let t = sufficient_stats(&family, &x)?;
            mc[0] += t[0] / n as f64;
            mc[1] += t[1] / n as f64;
        }
        println!(
            "(α, β) = ({alpha}, {beta}): η = ({:.6}, {:.6}), Monte Carlo ({:.4}, {:.4}), recovered ({:.10}, {:.10})",
            eta[0], eta[1], mc[0], mc[1], back[0], back[1]
        );
    }
    Ok(())
}
