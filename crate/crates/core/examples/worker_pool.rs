//! Highway rollouts executed serially and over a pool of socket-connected
//! worker threads, one of which dies mid-batch; the results are identical.
//!
//! ```bash
//! cargo run --release -p raresim --example worker_pool
//! ```

use std::sync::Arc;
use std::time::Instant;

use raresim::expfam;
use raresim::objective::{Highway, Objective};
use raresim::orchestrator::{derive_seed, RolloutProvider, Serial, Task, WorkerPool};
use raresim::scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hw: Arc<dyn Objective> = Arc::new(Highway::new(scenario::parse(scenario::shipped_dir().join("i80.scn"))?));
    let tasks = (0..200u64)
        .map(|i| {
            Ok(Task {
                task_id: i,
                seed: derive_seed(42, 2 * i + 1),
                scenario_hash: hw.fingerprint(),
                sample: expfam::sample(hw.family(), hw.theta0(), derive_seed(42, 2 * i))?.0,
            })
        })
        .collect::<Result<Vec<_>, expfam::ExpFamError>>()?;

    let start = Instant::now();
    let serial = Serial::new(hw.as_ref()).run_batch(tasks.clone())?;
    println!("serial: {} rollouts in {:.2} s", serial.len(), start.elapsed().as_secs_f64());

    let mut pool = WorkerPool::spawn_threads_with_faults(Arc::clone(&hw), &[None, Some(10), None, None])?;
    let start = Instant::now();
    let pooled = pool.run_batch(tasks)?;
    println!(
        "pool: {} rollouts in {:.2} s, {} of 4 workers still alive",
        pooled.len(),
        start.elapsed().as_secs_f64(),
        pool.live_workers()
    );
    pool.shutdown();
    println!("identical results: {}", pooled == serial);
    Ok(())
}
