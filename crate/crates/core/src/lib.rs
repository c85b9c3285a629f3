//! Cross-entropy importance sampling for estimating the probability of
//! rare, dangerous outcomes in a simulated multi-vehicle highway.
//!
//! - [`expfam`]: the exponential-family sampling distributions and their
//!   moment maps.
//! - [`sim`]: the kinematic highway simulator, lidar ray casting and the
//!   time-to-collision objective.
//! - [`scenario`]: scenario files and the base distribution they define.
//! - [`ce`]: the cross-entropy search and the naive / importance-sampling
//!   estimators.
//! - [`orchestrator`]: serial and socket-based parallel rollout execution.
//! - [`cli`]: the `raresim` command-line front end.

pub mod ce;
pub mod cli;
pub mod expfam;
pub mod fit;
pub mod objective;
pub mod orchestrator;
pub mod scenario;
pub mod sim;
pub mod special;
