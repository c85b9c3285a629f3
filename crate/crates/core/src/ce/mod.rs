//! The cross-entropy search for an importance-sampling distribution, and
//! the estimators that use its result.
//!
//! Each iteration samples `N_k` points from `P_{θ_k}`, evaluates the
//! objective, derives a level `γ_k` from γ and the batch ρ-quantile (see
//! [`LevelRule`]), forms the likelihood-weighted sufficient-statistic
//! average over the level set and moves `θ` toward it by moment matching. Iterates never leave the
//! family's search box.

mod estimate;
pub mod report;

use thiserror::Error;

use crate::expfam::{self, ExpFamError, FamilySpec, ParamPoint, SampleVector};
use crate::objective::Objective;
use crate::orchestrator::{derive_seed, OrchestratorError, RolloutProvider, Task};
pub use estimate::{
    compare_report, estimate_is, estimate_naive, required_sample_size, ComparisonRow, EstimateReport, Method,
};

#[derive(Debug, Error)]
pub enum CeError {
    #[error("{0}")]
    Config(String),
    #[error("quantile of an empty list")]
    EmptyInput,
    #[error("empty level set: no sample at or below {gamma_k}")]
    EmptyLevelSet { gamma_k: f64 },
    #[error("input lists are misaligned: {samples} samples, {values} objective values")]
    Misaligned { samples: usize, values: usize },
    #[error(transparent)]
    ExpFam(#[from] ExpFamError),
    #[error("rollout provider failed at iteration {iteration}: {source}")]
    Provider {
        iteration: usize,
        #[source]
        source: OrchestratorError,
        /// Iterations completed before the failure.
        history: Box<CeHistory>,
    },
    #[error("rollout provider failed: {0}")]
    Batch(#[from] OrchestratorError),
    #[error("reports do not match: {0}")]
    GridMismatch(String),
}

/// How the iteration level γ_k combines the target γ with the batch
/// ρ-quantile q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelRule {
    /// `γ_k = max(γ, q)`: the level descends toward γ and stops there, so
    /// the search targets the rare set `{f ≤ γ}` itself.
    #[default]
    Descend,
    /// `γ_k = min(γ, q)`: the level starts at γ and follows the quantile
    /// below it. Once q falls under γ the level keeps chasing the lower
    /// tail, so on an unbounded family the iterates do not settle.
    Min,
}

impl LevelRule {
    pub fn level(self, gamma: f64, quantile: f64) -> f64 {
        match self {
            LevelRule::Descend => gamma.max(quantile),
            LevelRule::Min => gamma.min(quantile),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LevelRule::Descend => "descend",
            LevelRule::Min => "min",
        }
    }
}

/// A per-iteration value: one for all iterations, or an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule<T> {
    Constant(T),
    PerIteration(Vec<T>),
}

impl<T: Copy> Schedule<T> {
    /// Value at iteration `k`; a list shorter than the run repeats its last entry.
    pub fn at(&self, k: usize) -> T {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PerIteration(v) => v[k.min(v.len() - 1)],
        }
    }

    fn values(&self) -> Vec<T> {
        match self {
            Schedule::Constant(v) => vec![*v],
            Schedule::PerIteration(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeConfig {
    /// Quantile level ρ ∈ (0, 1).
    pub rho: f64,
    /// Step sizes α_k ∈ (0, 1].
    pub alpha: Schedule<f64>,
    /// Samples per iteration N_k ≥ 1.
    pub n_k: Schedule<usize>,
    /// Iteration count K.
    pub iterations: usize,
    /// Rare-event threshold γ.
    pub gamma: f64,
    pub level_rule: LevelRule,
    pub seed: u64,
}

impl Default for CeConfig {
    fn default() -> Self {
        CeConfig {
            rho: 0.01,
            alpha: Schedule::Constant(0.8),
            n_k: Schedule::Constant(5000),
            iterations: 100,
            gamma: 0.14,
            level_rule: LevelRule::Descend,
            seed: 0,
        }
    }
}

impl CeConfig {
    pub fn validate(&self) -> Result<(), CeError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(CeError::Config("rho must lie in (0,1)".into()));
        }
        let alphas = self.alpha.values();
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(CeError::Config("alpha must lie in (0,1]".into()));
        }
        let ns = self.n_k.values();
        if ns.is_empty() || ns.contains(&0) {
            return Err(CeError::Config("n must be ≥ 1".into()));
        }
        if self.gamma.is_nan() {
            return Err(CeError::Config("gamma must be a number".into()));
        }
        Ok(())
    }
}

/// The ⌈ρN⌉-th smallest value (lower empirical quantile).
pub fn quantile(values: &[f64], rho: f64) -> Result<f64, CeError> {
    if values.is_empty() {
        return Err(CeError::EmptyInput);
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(CeError::Config("rho must lie in (0,1)".into()));
    }
    let n = values.len();
    // guard against ρN landing a rounding error above an integer
    let rank = ((rho * n as f64) * (1.0 - 4.0 * f64::EPSILON)).ceil().clamp(1.0, n as f64) as usize;
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*kth)
}

/// The weighted level-set average D and the level set's estimated mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetEstimate {
    /// `(1/N) Σ wᵢ 1{fᵢ ≤ γ_k} Γ(Xᵢ)`, unnormalized.
    pub d: Vec<f64>,
    /// `(1/N) Σ wᵢ 1{fᵢ ≤ γ_k}`, the base probability of the level set.
    pub mass: f64,
    /// Number of samples in the level set.
    pub count: usize,
}

impl LevelSetEstimate {
    /// D divided by the level-set mass: the base-conditional mean of Γ
    /// given `f ≤ γ_k`, which is the moment-matching target.
    pub fn target(&self) -> Vec<f64> {
        self.d.iter().map(|v| v / self.mass).collect()
    }
}

/// Likelihood ratios `p₀(x)/p_θ(x)`, each exponentiated from log scale.
pub fn likelihood_weights(
    family: &FamilySpec,
    theta0: &ParamPoint,
    theta: &ParamPoint,
    samples: &[SampleVector],
) -> Result<Vec<f64>, ExpFamError> {
    samples
        .iter()
        .map(|x| expfam::log_likelihood_ratio(family, theta0, theta, x).map(f64::exp))
        .collect()
}

pub fn estimate_d(
    samples: &[SampleVector],
    f_values: &[f64],
    gamma_k: f64,
    family: &FamilySpec,
    theta0: &ParamPoint,
    theta_k: &ParamPoint,
) -> Result<LevelSetEstimate, CeError> {
    if samples.len() != f_values.len() {
        return Err(CeError::Misaligned {
            samples: samples.len(),
            values: f_values.len(),
        });
    }
    let weights = likelihood_weights(family, theta0, theta_k, samples)?;
    weighted_level_set(samples, f_values, &weights, gamma_k, family)
}

fn weighted_level_set(
    samples: &[SampleVector],
    f_values: &[f64],
    weights: &[f64],
    gamma_k: f64,
    family: &FamilySpec,
) -> Result<LevelSetEstimate, CeError> {
    let n = samples.len() as f64;
    let mut d = vec![0.0; family.stats_dim()];
    let mut mass = 0.0;
    let mut count = 0;
    for ((x, &f), &w) in samples.iter().zip(f_values).zip(weights) {
        if f <= gamma_k {
            count += 1;
            mass += w;
            for (acc, s) in d.iter_mut().zip(expfam::sufficient_stats(family, x)?) {
                *acc += w * s;
            }
        }
    }
    if count == 0 || mass <= 0.0 {
        return Err(CeError::EmptyLevelSet { gamma_k });
    }
    d.iter_mut().for_each(|v| *v /= n);
    Ok(LevelSetEstimate { d, mass: mass / n, count })
}

/// One damped moment-matching step toward `target`, projected onto the box.
pub fn ce_step(theta_k: &ParamPoint, target: &[f64], alpha: f64, family: &FamilySpec) -> Result<ParamPoint, ExpFamError> {
    let current = expfam::mean_params(family, theta_k)?;
    if target.len() != current.len() {
        return Err(ExpFamError::Dimension {
            what: "mean-parameter target",
            expected: current.len(),
            got: target.len(),
        });
    }
    let eta: Vec<f64> = target
        .iter()
        .zip(&current)
        .map(|(t, m)| alpha * t + (1.0 - alpha) * m)
        .collect();
    expfam::mean_to_natural(family, &eta, Some(theta_k))
}

#[derive(Debug, Clone, PartialEq)]
pub enum IterationStatus {
    Updated,
    /// No sample reached γ_k; θ was kept.
    EmptyLevelSet,
    /// The moment solve failed; θ was kept.
    SolveFailed(String),
}

impl IterationStatus {
    pub fn label(&self) -> &'static str {
        match self {
            IterationStatus::Updated => "updated",
            IterationStatus::EmptyLevelSet => "empty_level_set",
            IterationStatus::SolveFailed(_) => "solve_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// The iterate the batch was drawn from.
    pub theta: ParamPoint,
    pub n: usize,
    pub alpha: f64,
    pub rho_quantile: f64,
    pub gamma_k: f64,
    /// Samples with `f ≤ γ`.
    pub rare_count: usize,
    /// Samples with `f ≤ γ_k`.
    pub level_count: usize,
    pub level_mass: f64,
    /// Unnormalized D; empty when the level set was empty.
    pub d_vector: Vec<f64>,
    pub weight_max: f64,
    pub weight_min: f64,
    /// Σw / max w.
    pub ess: f64,
    /// Rollouts that failed and were scored `+inf`.
    pub failures: usize,
    pub status: IterationStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeHistory {
    pub theta0: ParamPoint,
    pub iterations: Vec<IterationRecord>,
    /// θ_K, the iterate after the last update.
    pub final_theta: ParamPoint,
}

impl CeHistory {
    /// True when iterations ran and every one of them had an empty level set.
    pub fn stalled(&self) -> bool {
        !self.iterations.is_empty() && self.iterations.iter().all(|r| r.status == IterationStatus::EmptyLevelSet)
    }
}

/// A batch of samples with their objective values.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedBatch {
    pub samples: Vec<SampleVector>,
    pub f_values: Vec<f64>,
    pub failures: usize,
}

/// Draws `n` samples from `theta` and evaluates them through `provider`.
///
/// Sample `i` uses seeds derived from `(batch_seed, i)` only, so the batch
/// is reproducible regardless of how the provider schedules it. Failed
/// rollouts score `+inf`, i.e. never rare.
pub fn evaluate_batch(
    objective: &dyn Objective,
    provider: &mut dyn RolloutProvider,
    theta: &ParamPoint,
    n: usize,
    batch_seed: u64,
) -> Result<EvaluatedBatch, CeError> {
    let family = objective.family();
    let hash = objective.fingerprint();
    let samples = (0..n as u64)
        .map(|i| expfam::sample(family, theta, derive_seed(batch_seed, 2 * i)))
        .collect::<Result<Vec<_>, _>>()?;
    let tasks = samples
        .iter()
        .enumerate()
        .map(|(i, x)| Task {
            task_id: i as u64,
            seed: derive_seed(batch_seed, 2 * i as u64 + 1),
            scenario_hash: hash,
            sample: x.0.clone(),
        })
        .collect();
    let results = provider.run_batch(tasks)?;
    let mut failures = 0;
    let f_values = results
        .into_iter()
        .map(|r| match r.outcome {
            Ok(res) => res.min_ttc,
            Err(msg) => {
                log::warn!("rollout {} failed, scored +inf: {msg}", r.task_id);
                failures += 1;
                f64::INFINITY
            }
        })
        .collect();
    Ok(EvaluatedBatch {
        samples,
        f_values,
        failures,
    })
}

/// Runs K cross-entropy iterations starting from the base parameters θ₀.
pub fn run_ce(objective: &dyn Objective, config: &CeConfig, provider: &mut dyn RolloutProvider) -> Result<CeHistory, CeError> {
    config.validate()?;
    let family = objective.family();
    let theta0 = objective.theta0().clone();
    let mut history = CeHistory {
        theta0: theta0.clone(),
        iterations: Vec::with_capacity(config.iterations),
        final_theta: theta0.clone(),
    };
    let mut theta = theta0.clone();
    for k in 0..config.iterations {
        let n = config.n_k.at(k);
        let alpha = config.alpha.at(k);
        let batch = match evaluate_batch(objective, provider, &theta, n, derive_seed(config.seed, k as u64)) {
            Ok(b) => b,
            Err(CeError::Batch(source)) => {
                history.final_theta = theta;
                return Err(CeError::Provider {
                    iteration: k,
                    source,
                    history: Box::new(history),
                });
            }
            Err(e) => return Err(e),
        };
        let rho_quantile = quantile(&batch.f_values, config.rho)?;
        let gamma_k = config.level_rule.level(config.gamma, rho_quantile);
        let weights = likelihood_weights(family, &theta0, &theta, &batch.samples)?;
        let (weight_min, weight_max, ess) = weight_summary(&weights);
        let rare_count = batch.f_values.iter().filter(|&&f| f <= config.gamma).count();

        let (next, status, level) = match weighted_level_set(&batch.samples, &batch.f_values, &weights, gamma_k, family) {
            Ok(level) => match ce_step(&theta, &level.target(), alpha, family) {
                Ok(next) => (next, IterationStatus::Updated, Some(level)),
                Err(e) => {
                    log::warn!("iteration {k}: moment solve failed, keeping θ: {e}");
                    (theta.clone(), IterationStatus::SolveFailed(e.to_string()), Some(level))
                }
            },
            Err(CeError::EmptyLevelSet { .. }) => {
                log::warn!("iteration {k}: empty level set at γ_k = {gamma_k}, keeping θ");
                (theta.clone(), IterationStatus::EmptyLevelSet, None)
            }
            Err(e) => return Err(e),
        };
        log::info!(
            "iteration {k}: quantile {rho_quantile:.6}, γ_k {gamma_k:.6}, rare {rare_count}/{n}, ess {ess:.1}, {}",
            status.label()
        );
        let (level_count, level_mass, d_vector) = match level {
            Some(l) => (l.count, l.mass, l.d),
            None => (0, 0.0, Vec::new()),
        };
        history.iterations.push(IterationRecord {
            k,
            theta,
            n,
            alpha,
            rho_quantile,
            gamma_k,
            rare_count,
            level_count,
            level_mass,
            d_vector,
            weight_max,
            weight_min,
            ess,
            failures: batch.failures,
            status,
        });
        theta = next;
    }
    history.final_theta = theta;
    Ok(history)
}

/// (min, max, Σw / max w) of a weight vector.
pub fn weight_summary(weights: &[f64]) -> (f64, f64, f64) {
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = weights.iter().sum();
    let ess = if max > 0.0 { sum / max } else { 0.0 };
    (min, max, ess)
}

/// The iterate whose batch had the lowest ρ-quantile (earliest on ties);
/// θ₀ for an empty history.
pub fn select_best(history: &CeHistory) -> ParamPoint {
    let mut best: Option<&IterationRecord> = None;
    for rec in &history.iterations {
        if best.is_none_or(|b| rec.rho_quantile < b.rho_quantile) {
            best = Some(rec);
        }
    }
    best.map_or_else(|| history.theta0.clone(), |b| b.theta.clone())
}
