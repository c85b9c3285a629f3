//! Least-squares fit of the surrogate environment policy to the scripted
//! teacher, producing the base weight distribution N(μ₀, Σ₀).
//!
//! Teacher-driven episodes are simulated from randomized initial
//! conditions; the (features, teacher action) pairs are regressed with a
//! small ridge term. Σ₀ is diagonal: weight `j` of output `o` gets variance
//! `σ²_o / (F · E[f_j²]) + loading`, where `σ²_o` is the fit residual
//! variance of output `o`, so the action noise induced by a weight draw is
//! on the order of the fit residual.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::policy::{policy_beam_count, Action};
use crate::sim::rollout::{record_teacher_pairs, Driver, Simulation};
use crate::sim::{IdmEgo, Road, SimError, VehicleState};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Weight dimension `d`; the feature count is `d / 2`.
    pub dim: usize,
    pub road: Road,
    pub vehicle_length_m: f64,
    pub vehicle_width_m: f64,
    pub max_range_m: f64,
    pub target_speed_mps: f64,
    pub episodes: usize,
    pub steps_per_episode: u64,
    pub dt_s: f64,
    pub ridge: f64,
    pub loading: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            dim: 32,
            road: Road::default(),
            vehicle_length_m: 4.5,
            vehicle_width_m: 1.8,
            max_range_m: 100.0,
            target_speed_mps: 15.0,
            episodes: 40,
            steps_per_episode: 300,
            dt_s: 0.1,
            ridge: 1e-6,
            loading: 1e-4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub mu0: Vec<f64>,
    /// Lower-triangular factor of Σ₀ (diagonal here).
    pub sigma0_chol: DMatrix<f64>,
    /// Residual variance of (accel, steering rate).
    pub residual_var: [f64; 2],
    pub n_pairs: usize,
}

fn random_episode(cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Vec<VehicleState> {
    let (len, wid) = (cfg.vehicle_length_m, cfg.vehicle_width_m);
    let mut world = vec![VehicleState::new(60.0, cfg.road.lane_center(2), 0.0, 15.0, len, wid)];
    // one vehicle per lane, staggered so nobody starts overlapped
    for lane in 0..cfg.road.lane_count {
        let x = 70.0 + 25.0 * lane as f64 + rng.random_range(0.0..15.0);
        let y = cfg.road.lane_center(lane) + rng.random_range(-1.0..1.0);
        let heading = rng.random_range(-6f64..6.0).to_radians();
        let speed = rng.random_range(5.0..25.0);
        world.push(VehicleState::new(x, y, heading, speed, len, wid));
    }
    world
}

pub fn fit_reference_policy(cfg: &FitConfig) -> Result<FitResult, SimError> {
    assert!(cfg.dim >= 2 && cfg.dim % 2 == 0, "dim must be a positive even number");
    let n_features = cfg.dim / 2;
    let ego = IdmEgo::new(15.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs: Vec<(Vec<f64>, Action)> = Vec::new();
    for _ in 0..cfg.episodes {
        let vehicles = random_episode(cfg, &mut rng);
        let drivers = (1..vehicles.len())
            .map(|_| Driver::Teacher {
                target_speed: cfg.target_speed_mps,
            })
            .collect();
        let mut sim = Simulation {
            road: cfg.road,
            vehicles,
            drivers,
            ego: &ego,
            n_beams: 8,
            max_range: cfg.max_range_m,
            policy_beams: policy_beam_count(n_features).max(1),
            dt: cfg.dt_s,
            max_steps: cfg.steps_per_episode,
        };
        pairs.extend(record_teacher_pairs(&mut sim, n_features)?);
    }

    let n = pairs.len();
    let x = DMatrix::from_fn(n, n_features, |i, j| pairs[i].0[j]);
    let y_accel = DVector::from_iterator(n, pairs.iter().map(|p| p.1.accel));
    let y_steer = DVector::from_iterator(n, pairs.iter().map(|p| p.1.steer_rate));
    let gram = x.transpose() * &x + DMatrix::identity(n_features, n_features) * (cfg.ridge * n as f64);
    let chol = gram.cholesky().expect("ridge-regularized Gram matrix is positive definite");
    let w_accel = chol.solve(&(x.transpose() * &y_accel));
    let w_steer = chol.solve(&(x.transpose() * &y_steer));

    let resid_var = |w: &DVector<f64>, y: &DVector<f64>| (y - &x * w).norm_squared() / n as f64;
    let residual_var = [resid_var(&w_accel, &y_accel), resid_var(&w_steer, &y_steer)];

    let second_moment: Vec<f64> = (0..n_features)
        .map(|j| x.column(j).norm_squared() / n as f64)
        .collect();
    let mut diag = Vec::with_capacity(cfg.dim);
    for var in residual_var {
        for m2 in &second_moment {
            diag.push(var / (n_features as f64 * m2.max(1e-3)) + cfg.loading);
        }
    }
    let sigma0_chol = DMatrix::from_diagonal(&DVector::from_iterator(cfg.dim, diag.iter().map(|v| v.sqrt())));

    let mut mu0 = w_accel.as_slice().to_vec();
    mu0.extend_from_slice(w_steer.as_slice());
    Ok(FitResult {
        mu0,
        sigma0_chol,
        residual_var,
        n_pairs: n,
    })
}
