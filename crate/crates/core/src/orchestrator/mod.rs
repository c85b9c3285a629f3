//! Rollout execution: tasks are (sample, seed) pairs evaluated either
//! in-process or by a pool of socket-connected workers.
//!
//! All randomness lives in the task seed, and results are always returned
//! sorted by task id, so every provider yields bit-identical result lists
//! for the same batch.

mod pool;
pub mod protocol;
mod worker;

use thiserror::Error;

use crate::objective::Objective;
pub use pool::{WorkerPool, ACCEPT_TIMEOUT, MAX_RETRIES};
pub use protocol::{Frame, ProtocolError, Task, TaskResult};
pub use worker::{serve, worker_loop};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("socket: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("only {connected} of {expected} workers connected before the timeout")]
    HandshakeTimeout { connected: usize, expected: usize },
    #[error("worker scenario hash {worker} does not match controller hash {controller}")]
    HashMismatch { worker: String, controller: String },
    #[error("worker pool unavailable: {pending} tasks left with no live worker")]
    PoolUnavailable { pending: usize },
    #[error("task id {0} appears twice in one batch")]
    DuplicateTaskId(u64),
    #[error("failed to launch worker process: {0}")]
    Spawn(std::io::Error),
}

/// Anything that can evaluate a batch of tasks.
pub trait RolloutProvider {
    /// Returns exactly one result per task, sorted by task id.
    fn run_batch(&mut self, tasks: Vec<Task>) -> Result<Vec<TaskResult>, OrchestratorError>;
}

/// Per-task seed, a SplitMix64 hash of the batch seed and the task id.
pub fn derive_seed(batch_seed: u64, task_id: u64) -> u64 {
    let mut z = batch_seed
        .wrapping_add(task_id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn hex(hash: &[u8]) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Evaluates one task the way a worker does, refusing foreign scenario hashes.
pub fn execute(objective: &dyn Objective, task: &Task) -> TaskResult {
    let outcome = if task.scenario_hash != objective.fingerprint() {
        Err(format!(
            "scenario hash mismatch: task {} vs local {}",
            hex(&task.scenario_hash),
            hex(&objective.fingerprint())
        ))
    } else {
        objective.evaluate(&task.sample, task.seed).map_err(|e| e.to_string())
    };
    TaskResult {
        task_id: task.task_id,
        outcome,
    }
}

fn check_unique_sorted(tasks: &mut [Task]) -> Result<(), OrchestratorError> {
    tasks.sort_by_key(|t| t.task_id);
    match tasks.windows(2).find(|w| w[0].task_id == w[1].task_id) {
        Some(w) => Err(OrchestratorError::DuplicateTaskId(w[0].task_id)),
        None => Ok(()),
    }
}

/// In-process, single-threaded execution with no sockets.
pub struct Serial<'a> {
    objective: &'a dyn Objective,
}

impl<'a> Serial<'a> {
    pub fn new(objective: &'a dyn Objective) -> Self {
        Serial { objective }
    }
}

impl RolloutProvider for Serial<'_> {
    fn run_batch(&mut self, mut tasks: Vec<Task>) -> Result<Vec<TaskResult>, OrchestratorError> {
        check_unique_sorted(&mut tasks)?;
        Ok(tasks.iter().map(|t| execute(self.objective, t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ToyGaussian;

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
        assert_ne!(derive_seed(42, 7), derive_seed(43, 7));
    }

    #[test]
    fn serial_sorts_and_rejects_duplicates() {
        let toy = ToyGaussian::new();
        let hash = toy.fingerprint();
        let task = |id: u64| Task {
            task_id: id,
            seed: id,
            scenario_hash: hash,
            sample: vec![id as f64],
        };
        let out = Serial::new(&toy).run_batch(vec![task(3), task(1), task(2)]).unwrap();
        assert_eq!(out.iter().map(|r| r.task_id).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(out[2].outcome.as_ref().unwrap().min_ttc, 3.0);
        assert!(matches!(
            Serial::new(&toy).run_batch(vec![task(1), task(1)]),
            Err(OrchestratorError::DuplicateTaskId(1))
        ));
        assert!(Serial::new(&toy).run_batch(vec![]).unwrap().is_empty());
    }

    #[test]
    fn foreign_hash_is_refused() {
        let toy = ToyGaussian::new();
        let r = execute(
            &toy,
            &Task {
                task_id: 0,
                seed: 0,
                scenario_hash: [0; 32],
                sample: vec![0.0],
            },
        );
        assert!(r.outcome.unwrap_err().contains("mismatch"));
    }
}
