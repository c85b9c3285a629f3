//! Fits the surrogate environment policy to the scripted lane-keeping
//! teacher and writes the base weight distribution used by `i80.scn`.
//!
//! ```bash
//! cargo run --release -p raresim --example fit_reference_policy [out_dir]
//! ```

use std::path::PathBuf;

use raresim::fit::{fit_reference_policy, FitConfig};
use raresim::scenario::{params_io, shipped_dir};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(shipped_dir);
    let cfg = FitConfig::default();
    let fit = fit_reference_policy(&cfg)?;
    println!("fitted d = {} on {} teacher pairs", fit.mu0.len(), fit.n_pairs);
    println!(
        "residual variance: accel {:.4e} (m/s²)², steering {:.4e} (rad/s)²",
        fit.residual_var[0], fit.residual_var[1]
    );
    let mu0_path = out_dir.join("i80_mu0.bin");
    let sigma_path = out_dir.join("i80_sigma0.bin");
    params_io::write_vector(&mu0_path, &fit.mu0)?;
    params_io::write_cholesky(&sigma_path, &fit.sigma0_chol)?;
    println!("wrote {} and {}", mu0_path.display(), sigma_path.display());
    Ok(())
}
