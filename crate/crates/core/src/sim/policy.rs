//! Driver policies: the linear surrogate environment policy, the scripted
//! teacher it is fitted to, and ego policies under test.
//!
//! # Environment policy features
//!
//! The environment policy is `action = W f`, with `W` the 2×F matrix read
//! row-major from the weight vector (accel row first, steering row second),
//! so `d = 2F`. The feature vector `f` is the first `F` entries of:
//!
//! | idx | feature                                    | scaling to [0, 1]             |
//! |-----|--------------------------------------------|-------------------------------|
//! | 0   | bias                                       | constant 1                    |
//! | 1   | own speed                                  | `v / 40`                      |
//! | 2   | lateral offset from nearest lane center    | `off / lane_width + 0.5`      |
//! | 3   | heading error                              | `h / π + 0.5`                 |
//! | 4   | distance to left road boundary             | `(W_road − y) / W_road`       |
//! | 5   | distance to right road boundary            | `y / W_road`                  |
//! | 6+2k| range of policy beam k                     | `s / max_range`               |
//! | 7+2k| range rate of policy beam k                | `ṡ / 80 + 0.5`                |
//!
//! Every entry is clamped to [0, 1]. The number of policy beams is
//! `ceil((F − 6) / 2)`, spaced uniformly around the vehicle.

use std::f64::consts::PI;

use super::{LidarScan, Road, VehicleState};

pub const ACCEL_MIN: f64 = -8.0;
pub const ACCEL_MAX: f64 = 3.0;
pub const STEER_MAX: f64 = 0.5;

pub const CORE_FEATURES: usize = 6;
const SPEED_SCALE: f64 = 40.0;
const RATE_SCALE: f64 = 80.0;

/// Longitudinal acceleration (m/s²) and steering rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub accel: f64,
    pub steer_rate: f64,
}

impl Action {
    pub fn clamped(self) -> Action {
        Action {
            accel: self.accel.clamp(ACCEL_MIN, ACCEL_MAX),
            steer_rate: self.steer_rate.clamp(-STEER_MAX, STEER_MAX),
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Lidar beams an environment vehicle uses for `n_features` features.
pub fn policy_beam_count(n_features: usize) -> usize {
    n_features.saturating_sub(CORE_FEATURES).div_ceil(2)
}

/// The documented feature vector, truncated to `n_features`.
pub fn features(state: &VehicleState, scan: &LidarScan, road: &Road, n_features: usize) -> Vec<f64> {
    let unit = |v: f64| v.clamp(0.0, 1.0);
    let width = road.width_m();
    let mut f = Vec::with_capacity(CORE_FEATURES + 2 * scan.ranges.len());
    f.push(1.0);
    f.push(unit(state.speed / SPEED_SCALE));
    f.push(unit(road.lane_offset(state.y) / road.lane_width_m + 0.5));
    f.push(unit(wrap_angle(state.heading) / PI + 0.5));
    f.push(unit((width - state.y) / width));
    f.push(unit(state.y / width));
    for (s, rate) in scan.ranges.iter().zip(&scan.range_rates) {
        f.push(unit(s / scan.max_range));
        f.push(unit(rate / RATE_SCALE + 0.5));
    }
    f.truncate(n_features);
    f.resize(n_features, 0.0);
    f
}

/// Linear surrogate environment driver.
#[derive(Debug, Clone, Copy)]
pub struct EnvPolicy<'a> {
    weights: &'a [f64],
}

impl<'a> EnvPolicy<'a> {
    /// `weights.len()` must be even; it fixes the feature dimension.
    pub fn new(weights: &'a [f64]) -> Self {
        debug_assert!(weights.len() % 2 == 0);
        EnvPolicy { weights }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len() / 2
    }

    /// Unclamped `W f`.
    pub fn raw_action(&self, feats: &[f64]) -> Action {
        let n = self.n_features();
        let dot = |row: &[f64]| row.iter().zip(feats).map(|(w, f)| w * f).sum::<f64>();
        Action {
            accel: dot(&self.weights[..n]),
            steer_rate: dot(&self.weights[n..]),
        }
    }

    pub fn act(&self, state: &VehicleState, scan: &LidarScan, road: &Road) -> Action {
        let feats = features(state, scan, road, self.n_features());
        self.raw_action(&feats).clamped()
    }
}

const LANE_GAIN: f64 = 0.04;
const HEADING_GAIN: f64 = 1.0;

fn lane_keeping_steer(state: &VehicleState, road: &Road) -> f64 {
    -LANE_GAIN * road.lane_offset(state.y) - HEADING_GAIN * wrap_angle(state.heading)
}

/// Scripted lane-keeping, speed-tracking controller that the surrogate
/// environment policy is fitted to. Beam 0 of `scan` must point forward.
pub fn teacher_action(state: &VehicleState, scan: &LidarScan, road: &Road, target_speed: f64) -> Action {
    let mut accel = 0.5 * (target_speed - state.speed);
    if let (Some(&r), Some(&rate)) = (scan.ranges.first(), scan.range_rates.first()) {
        if r < 30.0 {
            accel -= 0.15 * (30.0 - r);
        }
        if rate < 0.0 && r < scan.max_range {
            accel += 0.3 * rate;
        }
    }
    Action {
        accel,
        steer_rate: lane_keeping_steer(state, road),
    }
    .clamped()
}

/// The system under test. Implementations must be pure functions of their
/// inputs; `single_instance` lets a policy ask the orchestrator to serialize
/// calls within a worker.
pub trait EgoPolicy: Send + Sync {
    fn act(&self, ego: &VehicleState, scan: &LidarScan, road: &Road) -> Action;

    fn single_instance(&self) -> bool {
        false
    }
}

/// Intelligent-driver-model car following on the forward cone of the scan,
/// with proportional lane keeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmEgo {
    pub target_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    /// Half-angle of the cone of beams treated as "ahead" (rad).
    pub cone: f64,
}

impl IdmEgo {
    pub fn new(target_speed: f64) -> Self {
        IdmEgo {
            target_speed,
            time_headway: 1.2,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            cone: 15f64.to_radians(),
        }
    }
}

impl EgoPolicy for IdmEgo {
    fn act(&self, ego: &VehicleState, scan: &LidarScan, road: &Road) -> Action {
        let mut gap = f64::INFINITY;
        let mut approach = 0.0;
        for ((&angle, &s), &rate) in scan.angles.iter().zip(&scan.ranges).zip(&scan.range_rates) {
            if wrap_angle(angle).abs() <= self.cone && s < scan.max_range {
                let g = s - 0.5 * ego.length;
                if g < gap {
                    gap = g;
                    approach = -rate;
                }
            }
        }
        let v = ego.speed;
        let free = 1.0 - (v / self.target_speed).powi(4);
        let interaction = if gap.is_finite() {
            let desired = self.min_gap
                + (v * self.time_headway + v * approach / (2.0 * (self.max_accel * self.comfort_decel).sqrt())).max(0.0);
            (desired / gap.max(0.1)).powi(2)
        } else {
            0.0
        };
        Action {
            accel: self.max_accel * (free - interaction),
            steer_rate: lane_keeping_steer(ego, road),
        }
        .clamped()
    }
}

/// Fixed action regardless of observations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstantEgo(pub Action);

impl EgoPolicy for ConstantEgo {
    fn act(&self, _ego: &VehicleState, _scan: &LidarScan, _road: &Road) -> Action {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::cast_rays;

    fn state() -> VehicleState {
        VehicleState::new(100.0, 9.5, 0.02, 14.0, 4.5, 1.8)
    }

    #[test]
    fn zero_weights_give_zero_action() {
        let w = vec![0.0; 32];
        let s = state();
        let scan = cast_rays(&s, &[], policy_beam_count(16), 100.0);
        assert_eq!(EnvPolicy::new(&w).act(&s, &scan, &Road::default()), Action::default());
    }

    #[test]
    fn raw_action_is_linear_in_weights() {
        let w: Vec<f64> = (0..32).map(|i| ((i * 7) % 5) as f64 * 0.01 - 0.02).collect();
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let s = state();
        let other = VehicleState::new(120.0, 9.25, 0.0, 10.0, 4.5, 1.8);
        let scan = cast_rays(&s, &[other], policy_beam_count(16), 100.0);
        let f = features(&s, &scan, &Road::default(), 16);
        let a = EnvPolicy::new(&w).raw_action(&f);
        let b = EnvPolicy::new(&w2).raw_action(&f);
        assert_eq!(b.accel, 2.0 * a.accel);
        assert_eq!(b.steer_rate, 2.0 * a.steer_rate);
    }

    #[test]
    fn feature_layout() {
        assert_eq!(policy_beam_count(16), 5);
        assert_eq!(policy_beam_count(2), 0);
        assert_eq!(policy_beam_count(7), 1);
        let s = state();
        let scan = cast_rays(&s, &[], 5, 100.0);
        let f = features(&s, &scan, &Road::default(), 16);
        assert_eq!(f.len(), 16);
        assert_eq!(f[0], 1.0);
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(features(&s, &scan, &Road::default(), 2).len(), 2);
    }

    #[test]
    fn idm_brakes_for_close_slow_leader() {
        let ego = VehicleState::new(0.0, 9.25, 0.0, 15.0, 4.5, 1.8);
        let lead = VehicleState::new(15.0, 9.25, 0.0, 5.0, 4.5, 1.8);
        let scan = cast_rays(&ego, &[lead], 36, 100.0);
        let a = IdmEgo::new(15.0).act(&ego, &scan, &Road::default());
        assert_eq!(a.accel, ACCEL_MIN);
        let free = cast_rays(&ego, &[], 36, 100.0);
        let a = IdmEgo::new(20.0).act(&ego, &free, &Road::default());
        assert!(a.accel > 0.0);
    }
}
