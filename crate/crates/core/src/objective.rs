//! Objectives f(X) that a rollout provider can evaluate: the highway
//! simulator plus two analytic benchmarks with known rare-event
//! probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::expfam::{self, Block, BlockParams, FamilySpec, FixedCovGaussian, ParamPoint};
use crate::scenario::{base_family, EgoPolicyKind, ScenarioSpec};
use crate::sim::{self, Action, ConstantEgo, EgoPolicy, IdmEgo, RolloutResult, SimError};

/// A black-box safety objective over samples of a base family.
pub trait Objective: Send + Sync {
    fn evaluate(&self, x: &[f64], seed: u64) -> Result<RolloutResult, SimError>;

    /// Digest identifying the objective; workers refuse tasks stamped with another.
    fn fingerprint(&self) -> [u8; 32];

    fn family(&self) -> &FamilySpec;

    /// Base-distribution parameters θ₀.
    fn theta0(&self) -> &ParamPoint;
}

pub fn ego_policy(kind: EgoPolicyKind) -> Box<dyn EgoPolicy> {
    match kind {
        EgoPolicyKind::Idm { target_speed_mps } => Box::new(IdmEgo::new(target_speed_mps)),
        EgoPolicyKind::Constant {
            accel_mps2,
            steer_rate_rps,
        } => Box::new(ConstantEgo(Action {
            accel: accel_mps2,
            steer_rate: steer_rate_rps,
        })),
    }
}

/// Minimum ray-cast TTC of the scenario's ego over one rollout.
pub struct Highway {
    spec: ScenarioSpec,
    family: FamilySpec,
    theta0: ParamPoint,
    ego: Box<dyn EgoPolicy>,
    fingerprint: [u8; 32],
}

impl Highway {
    pub fn new(spec: ScenarioSpec) -> Self {
        let ego = ego_policy(spec.ego.policy);
        Self::with_ego(spec, ego)
    }

    pub fn with_ego(spec: ScenarioSpec, ego: Box<dyn EgoPolicy>) -> Self {
        let (family, theta0) = base_family(&spec);
        let fingerprint = spec.fingerprint();
        Highway {
            spec,
            family,
            theta0,
            ego,
            fingerprint,
        }
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }
}

impl Objective for Highway {
    fn evaluate(&self, x: &[f64], seed: u64) -> Result<RolloutResult, SimError> {
        sim::rollout(x, &self.spec, self.ego.as_ref(), seed)
    }

    fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    fn family(&self) -> &FamilySpec {
        &self.family
    }

    fn theta0(&self) -> &ParamPoint {
        &self.theta0
    }
}

fn tagged_digest(tag: &str, payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(payload);
    h.finalize().into()
}

fn analytic_result(f: f64, log_p0: f64, seed: u64) -> RolloutResult {
    RolloutResult {
        min_ttc: f,
        crashed: false,
        crash_step: None,
        steps: 0,
        log_p0,
        seed,
    }
}

/// `f(x) = x` under a one-dimensional standard normal base; the search
/// box on the mean is unbounded.
pub struct ToyGaussian {
    family: FamilySpec,
    theta0: ParamPoint,
}

impl ToyGaussian {
    pub fn new() -> Self {
        ToyGaussian {
            family: FamilySpec::new(vec![Block::Gaussian(FixedCovGaussian::isotropic(vec![0.0], f64::INFINITY))]),
            theta0: ParamPoint(vec![BlockParams::Gaussian { mu: vec![0.0] }]),
        }
    }
}

impl Default for ToyGaussian {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for ToyGaussian {
    fn evaluate(&self, x: &[f64], seed: u64) -> Result<RolloutResult, SimError> {
        if x.len() != 1 {
            return Err(SimError::SampleDimension { expected: 1, got: x.len() });
        }
        let log_p0 = expfam::log_density(&self.family, &self.theta0, x).unwrap_or(f64::NAN);
        Ok(analytic_result(x[0], log_p0, seed))
    }

    fn fingerprint(&self) -> [u8; 32] {
        tagged_digest("toy-gaussian/v1", &[])
    }

    fn family(&self) -> &FamilySpec {
        &self.family
    }

    fn theta0(&self) -> &ParamPoint {
        &self.theta0
    }
}

/// A seeded coin: `f = 0` with probability `p`, else `1`, independent of
/// the sample. Base family as in [`ToyGaussian`].
pub struct Bernoulli {
    p: f64,
    toy: ToyGaussian,
}

impl Bernoulli {
    pub fn new(p: f64) -> Self {
        assert!((0.0..=1.0).contains(&p));
        Bernoulli { p, toy: ToyGaussian::new() }
    }
}

impl Objective for Bernoulli {
    fn evaluate(&self, x: &[f64], seed: u64) -> Result<RolloutResult, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB5AD_4ECE_DA1C_E2A9);
        let f = if rng.random::<f64>() < self.p { 0.0 } else { 1.0 };
        let log_p0 = expfam::log_density(&self.toy.family, &self.toy.theta0, x).unwrap_or(f64::NAN);
        Ok(analytic_result(f, log_p0, seed))
    }

    fn fingerprint(&self) -> [u8; 32] {
        tagged_digest("bernoulli/v1", &self.p.to_le_bytes())
    }

    fn family(&self) -> &FamilySpec {
        &self.toy.family
    }

    fn theta0(&self) -> &ParamPoint {
        &self.toy.theta0
    }
}
