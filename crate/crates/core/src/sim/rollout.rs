//! Time stepping and the rollout objective.

use std::io::Write;

use super::policy::{features, policy_beam_count, teacher_action, Action, EgoPolicy, EnvPolicy};
use super::{beam_ttc, cast_rays, check_crash, step, Road, SimError, VehicleState};
use crate::scenario::{base_family, ScenarioSpec};

/// Reported in place of an infinite minimum TTC.
pub const TTC_SENTINEL: f64 = 1e9;

/// Outcome of one rollout; `min_ttc` is the objective f(X).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutResult {
    pub min_ttc: f64,
    pub crashed: bool,
    pub crash_step: Option<u64>,
    pub steps: u64,
    pub log_p0: f64,
    pub seed: u64,
}

/// How a non-ego vehicle chooses its actions.
#[derive(Clone, Copy)]
pub enum Driver<'a> {
    Env(EnvPolicy<'a>),
    Teacher { target_speed: f64 },
    Fixed(Action),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome {
    /// Raw minimum TTC, `+inf` if no beam ever closed.
    pub min_ttc: f64,
    pub crash_step: Option<u64>,
    pub steps: u64,
}

/// A world of vehicles (index 0 is the ego) and the drivers moving them.
pub struct Simulation<'a> {
    pub road: Road,
    pub vehicles: Vec<VehicleState>,
    pub drivers: Vec<Driver<'a>>,
    pub ego: &'a dyn EgoPolicy,
    pub n_beams: usize,
    pub max_range: f64,
    /// Beams per environment vehicle observation.
    pub policy_beams: usize,
    pub dt: f64,
    pub max_steps: u64,
}

impl<'a> Simulation<'a> {
    fn others(&self, i: usize) -> Vec<VehicleState> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, v)| *v)
            .collect()
    }

    fn actions(&self, ego_scan: &super::LidarScan) -> Vec<Action> {
        let mut actions = Vec::with_capacity(self.vehicles.len());
        actions.push(self.ego.act(&self.vehicles[0], ego_scan, &self.road));
        for (i, driver) in self.drivers.iter().enumerate() {
            let me = &self.vehicles[i + 1];
            let a = match driver {
                Driver::Fixed(a) => *a,
                Driver::Env(p) => {
                    let scan = cast_rays(me, &self.others(i + 1), self.policy_beams, self.max_range);
                    p.act(me, &scan, &self.road)
                }
                Driver::Teacher { target_speed } => {
                    let scan = cast_rays(me, &self.others(i + 1), self.policy_beams.max(1), self.max_range);
                    teacher_action(me, &scan, &self.road, *target_speed)
                }
            };
            actions.push(a);
        }
        actions
    }

    /// Runs until the horizon, the ego leaving the road end, or an ego crash.
    ///
    /// Each step scans from the ego, folds the beam TTC into the running
    /// minimum, stops on a crash, and otherwise advances every vehicle.
    pub fn run(&mut self, mut trace: Option<&mut dyn Write>) -> Result<SimOutcome, SimError> {
        let mut min_ttc = f64::INFINITY;
        let mut step_idx = 0u64;
        loop {
            if self.vehicles.iter().any(|v| !v.is_finite()) {
                return Err(SimError::Diverged { step: step_idx as usize });
            }
            if let Some(w) = trace.as_deref_mut() {
                for (i, v) in self.vehicles.iter().enumerate() {
                    writeln!(w, "{step_idx},{i},{:?},{:?},{:?},{:?}", v.x, v.y, v.heading, v.speed)
                        .map_err(|e| SimError::Trace(e.to_string()))?;
                }
            }
            let ego_scan = cast_rays(&self.vehicles[0], &self.vehicles[1..], self.n_beams, self.max_range);
            min_ttc = min_ttc.min(beam_ttc(&ego_scan));
            if check_crash(&self.vehicles[0], &self.vehicles[1..]).is_some() {
                return Ok(SimOutcome {
                    min_ttc,
                    crash_step: Some(step_idx),
                    steps: step_idx,
                });
            }
            if step_idx >= self.max_steps || self.vehicles[0].x >= self.road.length_m {
                return Ok(SimOutcome {
                    min_ttc,
                    crash_step: None,
                    steps: step_idx,
                });
            }
            let actions = self.actions(&ego_scan);
            self.vehicles = step(&self.vehicles, &actions, self.dt);
            step_idx += 1;
        }
    }
}

/// Simulates one scenario realization.
///
/// Environment vehicles are driven by the linear surrogate policy with
/// weights taken from the sample. `log_p0` is the log base density of `x`.
pub fn rollout(x: &[f64], scenario: &ScenarioSpec, ego: &dyn EgoPolicy, seed: u64) -> Result<RolloutResult, SimError> {
    rollout_with_trace(x, scenario, ego, seed, None)
}

/// [`rollout`] that also writes `step,vehicle,x,y,heading,speed` rows.
pub fn rollout_with_trace(
    x: &[f64],
    scenario: &ScenarioSpec,
    ego: &dyn EgoPolicy,
    seed: u64,
    trace: Option<&mut dyn Write>,
) -> Result<RolloutResult, SimError> {
    if x.len() != scenario.sample_dim() {
        return Err(SimError::SampleDimension {
            expected: scenario.sample_dim(),
            got: x.len(),
        });
    }
    let drivers = (0..scenario.env_count())
        .map(|j| Driver::Env(EnvPolicy::new(scenario.policy_weights(x, j))))
        .collect();
    let mut sim = Simulation {
        road: scenario.road,
        vehicles: scenario.initial_world(x),
        drivers,
        ego,
        n_beams: scenario.measure.n_beams,
        max_range: scenario.measure.max_range_m,
        policy_beams: policy_beam_count(scenario.policy.dim / 2),
        dt: scenario.sim.dt_s,
        max_steps: scenario.sim.max_steps() as u64,
    };
    let out = sim.run(trace)?;
    let (family, theta0) = base_family(scenario);
    let log_p0 = crate::expfam::log_density(&family, &theta0, x).unwrap_or(f64::NAN);
    Ok(RolloutResult {
        min_ttc: if out.min_ttc.is_finite() { out.min_ttc } else { TTC_SENTINEL },
        crashed: out.crash_step.is_some(),
        crash_step: out.crash_step,
        steps: out.steps,
        log_p0,
        seed,
    })
}

/// Feature/action pairs recorded from teacher-driven vehicles.
pub fn record_teacher_pairs(sim: &mut Simulation<'_>, n_features: usize) -> Result<Vec<(Vec<f64>, Action)>, SimError> {
    let mut pairs = Vec::new();
    for step_idx in 0..sim.max_steps {
        if sim.vehicles.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged { step: step_idx as usize });
        }
        for (i, driver) in sim.drivers.iter().enumerate() {
            if let Driver::Teacher { target_speed } = driver {
                let me = &sim.vehicles[i + 1];
                let scan = cast_rays(me, &sim.others(i + 1), sim.policy_beams.max(1), sim.max_range);
                let feats = features(me, &scan, &sim.road, n_features);
                pairs.push((feats, teacher_action(me, &scan, &sim.road, *target_speed)));
            }
        }
        let ego_scan = cast_rays(&sim.vehicles[0], &sim.vehicles[1..], sim.n_beams, sim.max_range);
        let actions = sim.actions(&ego_scan);
        sim.vehicles = step(&sim.vehicles, &actions, sim.dt);
    }
    Ok(pairs)
}
