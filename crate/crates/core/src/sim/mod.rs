//! Deterministic 2D multi-agent highway simulator.
//!
//! Vehicles are oriented rectangles on a straight multi-lane road and move
//! with kinematic unicycle dynamics. The safety objective of a rollout is
//! the minimum over time of the ray-cast time-to-collision seen from the
//! ego vehicle's center.

pub mod geometry;
pub mod policy;
pub mod rollout;

use std::f64::consts::TAU;

use thiserror::Error;

use self::geometry::Obb;

pub use self::policy::{Action, ConstantEgo, EgoPolicy, EnvPolicy, IdmEgo};
pub use self::rollout::{rollout, rollout_with_trace, RolloutResult, Simulation, TTC_SENTINEL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("simulation diverged at step {step}: non-finite vehicle state")]
    Diverged { step: usize },
    #[error("sample has {got} coordinates, scenario expects {expected}")]
    SampleDimension { expected: usize, got: usize },
    #[error("failed to write trace: {0}")]
    Trace(String),
}

/// Pose, speed and footprint of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m), measured from the right road edge.
    pub y: f64,
    /// Radians; 0 points down the road.
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64, length: f64, width: f64) -> Self {
        VehicleState {
            x,
            y,
            heading,
            speed,
            length,
            width,
        }
    }

    pub fn velocity(&self) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.speed * c, self.speed * s)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite() && self.speed.is_finite()
    }
}

/// A straight road segment starting at x = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Road {
    pub length_m: f64,
    pub lane_count: usize,
    pub lane_width_m: f64,
}

impl Road {
    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width_m
    }

    pub fn nearest_lane(&self, y: f64) -> usize {
        let idx = (y / self.lane_width_m).floor();
        idx.clamp(0.0, (self.lane_count - 1) as f64) as usize
    }

    /// Signed offset from the nearest lane center.
    pub fn lane_offset(&self, y: f64) -> f64 {
        y - self.lane_center(self.nearest_lane(y))
    }

    pub fn width_m(&self) -> f64 {
        self.lane_count as f64 * self.lane_width_m
    }
}

impl Default for Road {
    fn default() -> Self {
        Road {
            length_m: 2000.0,
            lane_count: 6,
            lane_width_m: 3.7,
        }
    }
}

/// Ranges and range rates from a virtual lidar centered on one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub range_rates: Vec<f64>,
    /// Beam angles relative to the observer's heading, uniform in [0, 2π).
    pub angles: Vec<f64>,
    /// Index into the `others` slice of the vehicle each beam hit.
    pub hits: Vec<Option<usize>>,
    pub max_range: f64,
}

/// Smallest range reported for a beam whose origin sits on a boundary.
const MIN_RANGE: f64 = 1e-9;

/// Casts `n_beams` rays from the center of `ego`.
///
/// A beam's range is the distance to the first rectangle boundary it meets
/// (capped at `max_range`); its range rate is the hit vehicle's velocity
/// relative to `ego`, projected onto the beam. Misses report `max_range` and
/// a zero rate.
pub fn cast_rays(ego: &VehicleState, others: &[VehicleState], n_beams: usize, max_range: f64) -> LidarScan {
    let boxes: Vec<Obb> = others.iter().map(Obb::from_vehicle).collect();
    let (evx, evy) = ego.velocity();
    let mut scan = LidarScan {
        ranges: Vec::with_capacity(n_beams),
        range_rates: Vec::with_capacity(n_beams),
        angles: Vec::with_capacity(n_beams),
        hits: Vec::with_capacity(n_beams),
        max_range,
    };
    for k in 0..n_beams {
        let angle = TAU * k as f64 / n_beams as f64;
        let (dy, dx) = (ego.heading + angle).sin_cos();
        let mut best = max_range;
        let mut hit = None;
        for (i, b) in boxes.iter().enumerate() {
            if let Some(t) = b.ray_hit(ego.x, ego.y, dx, dy) {
                let t = t.max(MIN_RANGE);
                if t < best {
                    best = t;
                    hit = Some(i);
                }
            }
        }
        let rate = match hit {
            Some(i) => {
                let (ovx, ovy) = others[i].velocity();
                (ovx - evx) * dx + (ovy - evy) * dy
            }
            None => 0.0,
        };
        scan.ranges.push(best);
        scan.range_rates.push(rate);
        scan.angles.push(angle);
        scan.hits.push(hit);
    }
    scan
}

/// Minimum of `-s / ṡ` over closing beams; `+inf` when no beam closes.
pub fn beam_ttc(scan: &LidarScan) -> f64 {
    scan.ranges
        .iter()
        .zip(&scan.range_rates)
        .filter(|(_, &rate)| rate < 0.0)
        .map(|(&s, &rate)| -s / rate)
        .fold(f64::INFINITY, f64::min)
}

/// Lowest index of a vehicle whose footprint intersects the ego footprint.
pub fn check_crash(ego: &VehicleState, others: &[VehicleState]) -> Option<usize> {
    let e = Obb::from_vehicle(ego);
    others.iter().position(|o| e.intersects(&Obb::from_vehicle(o)))
}

/// Kinematic unicycle update of every vehicle.
pub fn step(world: &[VehicleState], actions: &[Action], dt: f64) -> Vec<VehicleState> {
    world
        .iter()
        .zip(actions)
        .map(|(v, a)| {
            let heading = v.heading + a.steer_rate * dt;
            let speed = (v.speed + a.accel * dt).max(0.0);
            let (s, c) = heading.sin_cos();
            VehicleState {
                x: v.x + speed * c * dt,
                y: v.y + speed * s * dt,
                heading,
                speed,
                ..*v
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn car(x: f64, y: f64, heading: f64, speed: f64) -> VehicleState {
        VehicleState::new(x, y, heading, speed, 4.0, 2.0)
    }

    #[test]
    fn forward_beam_range_and_rate() {
        let ego = car(0.0, 0.0, 0.0, 15.0);
        let lead = car(22.0, 0.0, 0.0, 10.0);
        let scan = cast_rays(&ego, &[lead], 8, 100.0);
        assert_eq!(scan.ranges[0], 20.0);
        assert_eq!(scan.range_rates[0], -5.0);
        assert_eq!(scan.hits[0], Some(0));
        // rear beam misses
        assert_eq!(scan.ranges[4], 100.0);
        assert_eq!(scan.range_rates[4], 0.0);
    }

    #[test]
    fn empty_scene_scan() {
        let scan = cast_rays(&car(0.0, 0.0, 0.3, 10.0), &[], 16, 80.0);
        assert!(scan.ranges.iter().all(|&r| r == 80.0));
        assert!(scan.range_rates.iter().all(|&r| r == 0.0));
        assert_eq!(beam_ttc(&scan), f64::INFINITY);
    }

    #[test]
    fn beam_ttc_examples() {
        let scan = |ranges: Vec<f64>, rates: Vec<f64>| LidarScan {
            angles: vec![0.0; ranges.len()],
            hits: vec![None; ranges.len()],
            ranges,
            range_rates: rates,
            max_range: 100.0,
        };
        assert_eq!(beam_ttc(&scan(vec![20.0], vec![-10.0])), 2.0);
        assert_eq!(beam_ttc(&scan(vec![20.0, 5.0], vec![1.0, 3.0])), f64::INFINITY);
        assert_eq!(beam_ttc(&scan(vec![30.0, 6.0, 9.0], vec![-10.0, -4.0, 2.0])), 1.5);
    }

    #[test]
    fn ray_hit_nearest_of_two() {
        let ego = car(0.0, 0.0, 0.0, 0.0);
        let scan = cast_rays(&ego, &[car(40.0, 0.0, 0.0, 0.0), car(12.0, 0.0, 0.0, 0.0)], 4, 100.0);
        assert_eq!(scan.ranges[0], 10.0);
        assert_eq!(scan.hits[0], Some(1));
    }

    #[test]
    fn crash_examples() {
        let ego = car(0.0, 0.0, 0.0, 0.0);
        assert_eq!(check_crash(&ego, &[ego]), Some(0));
        assert_eq!(check_crash(&ego, &[car(5.0, 0.0, 0.0, 0.0)]), None);
        assert_eq!(check_crash(&ego, &[car(9.0, 0.0, 0.0, 0.0), car(3.0, 1.0, 0.2, 0.0), ego]), Some(1));
    }

    #[test]
    fn step_examples() {
        let v = car(0.0, 0.0, 0.0, 10.0);
        let next = step(&[v], &[Action::default()], 0.1);
        assert_eq!(next[0].x, 1.0);
        assert_eq!(next[0].y, 0.0);
        let brake = Action {
            accel: -10.0 / 0.1,
            steer_rate: 0.0,
        };
        assert_eq!(step(&[v], &[brake], 0.1)[0].speed, 0.0);
        let harder = Action {
            accel: -500.0,
            steer_rate: 0.0,
        };
        assert_eq!(step(&[v], &[harder], 0.1)[0].speed, 0.0);
    }

    #[test]
    fn road_lane_geometry() {
        let road = Road::default();
        assert_abs_diff_eq!(road.lane_center(2), 9.25, epsilon = 1e-12);
        assert_eq!(road.nearest_lane(9.0), 2);
        assert_eq!(road.nearest_lane(-3.0), 0);
        assert_eq!(road.nearest_lane(100.0), 5);
        assert_abs_diff_eq!(road.lane_offset(9.5), 0.25, epsilon = 1e-12);
    }
}
